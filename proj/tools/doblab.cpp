#include "doblab/cli.hpp"

int main(int argc, char** argv) { return doblab::run(argc, argv); }
