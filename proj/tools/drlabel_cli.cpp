#include "drlabel/commands.hpp"

int main(int argc, char** argv) { return drlabel::run_cli(argc, argv); }
