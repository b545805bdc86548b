#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace latesim {

// Malformed inputs: files, dimensions, ids, config values. CLI maps this to exit 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values, failed gradient checks. CLI maps this to exit 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Role : std::uint8_t { query = 0, passage = 1 };
enum class Modality : std::uint8_t { text = 0, image = 1 };

std::string to_string(Role r);
std::string to_string(Modality m);
Role role_from_string(const std::string& s);
Modality modality_from_string(const std::string& s);

}  // namespace latesim
