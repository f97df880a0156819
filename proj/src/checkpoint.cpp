#include "remn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

namespace remn {
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

using Kind = CheckpointError::Kind;

template <typename TensorT>
struct Entry {
  std::string name;
  TensorT* tensor;
};

// Constness is deduced so the same ordering serves save (const) and load.
template <typename Model, typename TensorT>
std::vector<Entry<TensorT>> entries(Model& model, TensorT& mode) {
  std::vector<Entry<TensorT>> out;
  for (auto& p : model.parameters()) out.push_back({p.name, &p.value});
  for (auto& bn : model.batch_norms()) {
    out.push_back({bn.name + ".running_mean", &bn.state.running_mean});
    out.push_back({bn.name + ".running_var", &bn.state.running_var});
  }
  out.push_back({kModeTensorName, &mode});
  return out;
}

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::string str(std::size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(Kind::Truncated, origin_ + ": file truncated at byte " + std::to_string(pos_) +
                                                 " (needed " + std::to_string(n) + " more)");
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U le() {
    const char* p = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i));
    return v;
  }

  const std::vector<char>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ResEmoteNet& model, const std::filesystem::path& path) {
  const Tensor mode(Shape{1}, model.mode() == Mode::Eval ? 1.0f : 0.0f);
  const auto list = entries(model, mode);

  Writer w;
  w.raw("REMN");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(list.size()));
  for (const auto& e : list) {
    if (e.name.size() > 0xffff) throw CheckpointError(Kind::Io, "tensor name too long: " + e.name);
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name);
    w.u8(static_cast<std::uint8_t>(e.tensor->rank()));
    for (std::size_t d : e.tensor->shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.tensor->data()) w.f32(v);
  }

  if (path.empty()) throw CheckpointError(Kind::Io, "checkpoint path is empty");
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError(Kind::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(Kind::Io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ResEmoteNet load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());

  if (bytes.size() < 4 || std::memcmp(bytes.data(), "REMN", 4) != 0) {
    throw CheckpointError(Kind::BadMagic, path.string() + ": missing REMN magic bytes");
  }
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::UnsupportedVersion, path.string() + ": unsupported format version " +
                                                        std::to_string(version));
  }

  ResEmoteNet model(config);
  Tensor mode(Shape{1}, 0.0f);
  const auto list = entries(model, mode);
  const std::uint32_t count = r.u32();
  if (count != list.size()) {
    throw CheckpointError(Kind::CountMismatch, path.string() + ": holds " + std::to_string(count) +
                                                   " tensors, model config expects " + std::to_string(list.size()));
  }
  for (const auto& e : list) {
    const std::string name = r.str(r.u16());
    if (name != e.name) {
      throw CheckpointError(Kind::NameMismatch, path.string() + ": expected tensor '" + e.name + "', found '" +
                                                    name + "'");
    }
    const std::size_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != e.tensor->shape()) {
      throw CheckpointError(Kind::ShapeMismatch, path.string() + ": tensor '" + name + "' has shape " +
                                                     shape_str(shape) + ", model expects " +
                                                     shape_str(e.tensor->shape()));
    }
    for (auto& v : e.tensor->data()) v = r.f32();
  }
  if (!r.at_end()) {
    throw CheckpointError(Kind::TrailingData, path.string() + ": unexpected data after byte " + std::to_string(r.pos()));
  }
  model.set_mode(mode[0] != 0.0f ? Mode::Eval : Mode::Train);
  return model;
}

}  // namespace remn
