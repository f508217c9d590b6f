#include "eatstop/cli.hpp"

int main(int argc, char** argv) { return eatstop::cli::run_cli(argc, argv); }
