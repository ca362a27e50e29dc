#include "ttp/cli.hpp"

int main(int argc, char** argv) { return ttp::run_cli(argc, argv); }
