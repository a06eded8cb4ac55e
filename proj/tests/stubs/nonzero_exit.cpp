// Fails on the first request.
#include <iostream>
#include <string>

int main() {
  std::string line;
  if (std::getline(std::cin, line)) return 3;
  return 0;
}
