#include "igmrf/cli.hpp"

int main(int argc, char** argv) { return igmrf::run_cli(argc, argv); }
