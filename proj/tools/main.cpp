#include "dsr/cli.h"

int main(int argc, char** argv) { return dsr::cli::dispatch(argc, argv); }
