#include "flare/commands.hpp"

int main(int argc, char** argv) { return flare::run_cli(argc, argv); }
