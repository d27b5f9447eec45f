#include "pyraflow/cli.hpp"

int main(int argc, char** argv) { return pyraflow::cli_main(argc, argv); }
