#include "soapbench/cli.hpp"

int main(int argc, char** argv) { return soapbench::run_cli(argc, argv); }
