#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ssm {

// 94 printable ASCII symbols ('!'..'~') plus PAD and EOS: the 96 output classes of the text decoder.
class Charset {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kPrintable = 94;
  static constexpr int kSize = kPrintable + 2;
  static constexpr int kMaxLabelLength = 25;
  static constexpr std::string_view kId = "ascii94-pad-eos-v1";

  static bool contains(char c) { return c >= '!' && c <= '~'; }
  static int encode(char c);
  static char decode(int index);

  // Characters, then EOS when there is room, PAD-filled to max_len.
  static std::vector<int64_t> encode_label(std::string_view text, int max_len = kMaxLabelLength);
  // Characters up to the first EOS, PAD entries skipped.
  static std::string decode_indices(const std::vector<int64_t>& indices);

  // Throws std::invalid_argument naming the first offending character.
  static void validate(std::string_view text);
  // Lower-cased and restricted to the printable set; the word-accuracy comparison form.
  static std::string normalize(std::string_view text);
};

}  // namespace ssm
