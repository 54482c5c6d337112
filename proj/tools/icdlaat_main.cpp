#include "icdlaat/cli.hpp"

int main(int argc, char** argv) { return icdlaat::run_cli(argc, argv); }
