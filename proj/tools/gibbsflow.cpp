#include "experiment.hpp"

int main(int argc, char** argv) { return gibbsflow::cli::main(argc, argv); }
