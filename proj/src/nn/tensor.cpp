#include "oarseg/nn/tensor.hpp"

namespace oarseg::nn {

std::string to_string(const Shape5& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.x) + "," +
         std::to_string(s.y) + "," + std::to_string(s.z) + ")";
}

}  // namespace oarseg::nn
