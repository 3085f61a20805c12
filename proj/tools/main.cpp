#include <cstdio>

int main() {
  std::fprintf(stderr, "sparseview: command-line interface not wired up yet\n");
  return 2;
}
