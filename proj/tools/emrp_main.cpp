#include <iostream>

#include "emrp/app.hpp"

int main(int argc, char** argv) { return emrp::app::run(argc, argv, std::cout, std::cerr); }
