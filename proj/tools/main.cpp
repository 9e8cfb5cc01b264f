#include "commands.hpp"

int main(int argc, char** argv) { return gaitforge::cli::run(argc, argv); }
