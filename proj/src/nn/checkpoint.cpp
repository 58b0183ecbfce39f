#include "pvudf/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace pvudf::nn {
namespace {

constexpr std::string_view kMagic = "PVUDFCKP";
constexpr std::uint64_t kMaxRank = 8;

class Writer {
 public:
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.insert(out_.end(), b, b + 4);
  }
  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.insert(out_.end(), b, b + 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }
  const std::vector<char>& data() const { return out_; }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string() { return std::string(bytes(u32())); }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > kMaxRank) fail("tensor rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = u64();
      if (d == 0 || count > (data_.size() - pos_) / d) fail("tensor shape exceeds file size");
      count *= d;
    }
    if (count * 8 > data_.size() - pos_) fail("tensor data truncated");
    std::vector<double> values(count);
    for (double& v : values) v = f64();
    return Tensor(std::move(shape), std::move(values));
  }
  bool done() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& detail) const {
    throw std::runtime_error("checkpoint: " + detail + " (at byte " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("unexpected end of file");
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

std::string encode_header(const std::map<std::string, std::string>& header) {
  std::string text;
  for (const auto& [key, value] : header) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: header entry '" + key + "' cannot be encoded");
    }
    text += key + "=" + value + "\n";
  }
  return text;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.string(encode_header(checkpoint.header));
  w.u64(static_cast<std::uint64_t>(checkpoint.store.step()));
  w.u32(static_cast<std::uint32_t>(checkpoint.store.parameters().size()));
  for (const auto& [name, p] : checkpoint.store.parameters()) {
    w.string(name);
    w.tensor(p.value);
    w.tensor(p.first_moment);
    w.tensor(p.second_moment);
  }
  w.u32(static_cast<std::uint32_t>(checkpoint.store.buffers().size()));
  for (const auto& [name, t] : checkpoint.store.buffers()) {
    w.string(name);
    w.tensor(t);
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp.string() + " for writing");
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    out.flush();
    if (!out) throw std::runtime_error("checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(kMagic.size()) != kMagic) r.fail(path.string() + " is not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  const std::string text = r.string();
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string::npos) r.fail("unterminated header line");
    const std::string line = text.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) r.fail("malformed header line '" + line + "'");
    ck.header[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  ck.store.set_step(static_cast<std::int64_t>(r.u64()));
  const std::uint32_t params = r.u32();
  for (std::uint32_t i = 0; i < params; ++i) {
    const std::string name = r.string();
    if (ck.store.contains(name)) r.fail("duplicate parameter " + name);
    Tensor value = r.tensor();
    Tensor m = r.tensor();
    Tensor v = r.tensor();
    if (m.shape() != value.shape() || v.shape() != value.shape()) {
      r.fail("moment buffers of " + name + " do not match its shape");
    }
    Parameter& p = ck.store.add(name, std::move(value));
    p.first_moment = std::move(m);
    p.second_moment = std::move(v);
  }
  const std::uint32_t buffers = r.u32();
  for (std::uint32_t i = 0; i < buffers; ++i) {
    const std::string name = r.string();
    if (ck.store.buffers().count(name)) r.fail("duplicate buffer " + name);
    ck.store.add_buffer(name, r.tensor());
  }
  if (!r.done()) r.fail("trailing bytes");
  return ck;
}

}  // namespace pvudf::nn
