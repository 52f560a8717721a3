#include <cstdio>

int main() {
  std::puts("salnet: subcommands not wired yet");
  return 0;
}
