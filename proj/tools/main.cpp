#include <iostream>

int main() {
  std::cout << "attrlab: CLI not wired up yet\n";
  return 0;
}
