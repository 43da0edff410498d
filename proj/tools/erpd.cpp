#include "erpd/cli.hpp"

int main(int argc, char** argv) { return erpd::cli_main(argc, argv); }
