#include "mqn/cli.hpp"

int main(int argc, char** argv)
{
    return mqn::dispatch(argc, argv);
}
