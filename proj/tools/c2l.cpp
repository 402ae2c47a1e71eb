#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "c2l/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees the same large buffers every step; keeping
  // them on the heap instead of fresh mmaps saves page-fault time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return c2l::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
