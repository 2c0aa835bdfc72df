#include "bmi/cli/experiment.hpp"

int main(int argc, char** argv) { return bmi::cli::main_entry(argc, argv); }
