#include "cli_app.hpp"

int main(int argc, char** argv) { return slt::cli::run(argc, argv); }
