#include "ugest/cli.hpp"

int main(int argc, char** argv) { return ugest::run_cli(argc, argv); }
