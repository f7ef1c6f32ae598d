#include "sassha/cli.hpp"

int main(int argc, char** argv) { return sassha::run_cli(argc, argv); }
