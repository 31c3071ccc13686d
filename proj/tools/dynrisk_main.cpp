#include "dynrisk/cli.hpp"

int main(int argc, char** argv) { return dynrisk::cli::run_cli(argc, argv); }
