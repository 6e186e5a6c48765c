#include "irrig/cli.hpp"

int main(int argc, char** argv) { return irrig::cli::run(argc, argv); }
