#include "ssm/charset.hpp"

#include <cctype>
#include <stdexcept>

namespace ssm {

int Charset::encode(char c) {
  if (!contains(c)) {
    throw std::invalid_argument(std::string("character outside charset: code ") +
                                std::to_string(static_cast<unsigned char>(c)));
  }
  return 2 + (c - '!');
}

char Charset::decode(int index) {
  if (index < 2 || index >= kSize) throw std::out_of_range("not a printable class index");
  return static_cast<char>('!' + (index - 2));
}

std::vector<int64_t> Charset::encode_label(std::string_view text, int max_len) {
  if (static_cast<int>(text.size()) > max_len) {
    throw std::invalid_argument("label longer than " + std::to_string(max_len) + " characters");
  }
  std::vector<int64_t> out;
  out.reserve(max_len);
  for (char c : text) out.push_back(encode(c));
  if (static_cast<int>(out.size()) < max_len) out.push_back(kEos);
  out.resize(max_len, kPad);
  return out;
}

std::string Charset::decode_indices(const std::vector<int64_t>& indices) {
  std::string s;
  for (int64_t idx : indices) {
    if (idx == kEos) break;
    if (idx == kPad) continue;
    s.push_back(decode(static_cast<int>(idx)));
  }
  return s;
}

void Charset::validate(std::string_view text) {
  for (char c : text) (void)encode(c);
}

std::string Charset::normalize(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (contains(c)) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return s;
}

}  // namespace ssm
