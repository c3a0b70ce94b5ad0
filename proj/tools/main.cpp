#include "memprior/cli.hpp"

int main(int argc, char** argv) { return memprior::cli::run_app(argc, argv); }
