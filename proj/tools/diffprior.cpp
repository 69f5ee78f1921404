#include "diffprior/cli.hpp"

int main(int argc, char** argv) { return diffprior::run_cli(argc, argv); }
