// Lowest-fidelity model of the polynomial-trig suite, evaluated out of process.
#include <json.hpp>

#include <boost/math/constants/constants.hpp>

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

int main() {
  const double pi = boost::math::constants::pi<double>();
  const double s3h = std::sqrt(3.0) / 2.0;
  std::string line;
  while (std::getline(std::cin, line)) {
    const auto req = nlohmann::json::parse(line);
    const double t = req.at("inputs").at(0).get<double>();
    std::vector<double> y{s3h * std::pow(t, 2), s3h * t, std::cos(2.0 * pi * t + pi / 4.0)};
    nlohmann::json resp{{"id", req.at("id")}, {"outputs", y}};
    std::cout << resp.dump() << '\n' << std::flush;
  }
}
