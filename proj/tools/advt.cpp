#include "advt/cli.hpp"

int main(int argc, char** argv) { return advt::run_cli(argc, argv); }
