#include "sunet/cli.hpp"

int main(int argc, char** argv) { return sunet::run_cli(argc, argv); }
