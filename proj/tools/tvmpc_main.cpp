#include "tvmpc/simcli.hpp"

int main(int argc, char** argv) { return tvmpc::cli_main(argc, argv); }
