#include "cli.hpp"

int main(int argc, char** argv) { return axbert::cli::run_cli(argc, argv); }
