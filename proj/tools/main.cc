#include "iod/cli.h"

int main(int argc, char** argv) { return iod::dispatch(argc, argv); }
