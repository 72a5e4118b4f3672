#include "spmix/cli.hpp"

int main(int argc, char** argv) { return spmix::cli_main(argc, argv); }
