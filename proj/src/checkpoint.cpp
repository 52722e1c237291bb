#include "mtrz/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string_view>

namespace mtrz {

namespace {

constexpr std::string_view kMagic = "MTRZ1";

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = value;
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((bits >> (8U * i)) & 0xFFU));
  }
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) {
      throw std::runtime_error("checkpoint " + path_ + " is truncated");
    }
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8U * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw std::runtime_error("checkpoint " + path_ + " is truncated");
    }
    const std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto& blocks = ck.params.blocks();
  if (ck.adam.m.size() != blocks.size() || ck.adam.v.size() != blocks.size()) {
    throw std::invalid_argument("checkpoint: optimizer state does not match parameters");
  }
  std::string out(kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, ck.vocab_hash);
  put_le<std::uint64_t>(out, ck.params.width());
  put_le<std::uint64_t>(out, ck.params.vocab_size());
  for (const auto& b : blocks) {
    for (const double x : b.value) {
      put_le(out, x);
    }
  }
  put_le<std::uint64_t>(out, ck.adam.step);
  for (const auto* moments : {&ck.adam.m, &ck.adam.v}) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if ((*moments)[b].size() != blocks[b].size()) {
        throw std::invalid_argument("checkpoint: optimizer state shape mismatch for block '" + blocks[b].name + "'");
      }
      for (const double x : (*moments)[b]) {
        put_le(out, x);
      }
    }
  }
  put_le<std::uint64_t>(out, ck.step);

  // Write-then-rename so an interrupted save never clobbers a good checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) {
      throw std::runtime_error("cannot write checkpoint " + tmp.string());
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) {
      throw std::runtime_error("failed writing checkpoint " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot read checkpoint " + path.string());
  }
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.take(kMagic.size()) != kMagic) {
    throw std::runtime_error("checkpoint " + path.string() + " has a bad magic string");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  const auto vocab_hash = r.get<std::uint64_t>();
  const auto d = r.get<std::uint64_t>();
  const auto v = r.get<std::uint64_t>();
  if (d == 0 || d > 4096 || v < kReservedTokens || v > kMaxVocabSize) {
    throw std::runtime_error("checkpoint " + path.string() + " has implausible dimensions");
  }
  Checkpoint ck{vocab_hash, PolicyParams(v, d), {}, 0};
  for (auto& b : ck.params.blocks()) {
    for (auto& x : b.value) {
      x = r.get<double>();
    }
  }
  ck.adam = AdamState::zeros_like(ck.params);
  ck.adam.step = r.get<std::uint64_t>();
  for (auto* moments : {&ck.adam.m, &ck.adam.v}) {
    for (auto& block : *moments) {
      for (auto& x : block) {
        x = r.get<double>();
      }
    }
  }
  ck.step = r.get<std::uint64_t>();
  if (!r.done()) {
    throw std::runtime_error("checkpoint " + path.string() + " has trailing bytes");
  }
  return ck;
}

}  // namespace mtrz
