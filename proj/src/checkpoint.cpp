#include "segdiff/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace segdiff::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t digest(const io::Json& hyper) { return fnv1a(hyper.dump()); }

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error("truncated checkpoint");
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const std::string& kind, const io::Json& hyper, const nn::ParamStore& params) {
  std::string out = "SGUD";
  put<std::uint32_t>(out, kVersion);
  put_str(out, kind);
  const std::string h = hyper.dump();
  put_str(out, h);
  put<std::uint64_t>(out, fnv1a(h));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, v] : params.entries()) {
    put_str(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v->value.rank()));
    for (auto d : v->value.shape()) put<std::uint64_t>(out, d);
    for (double x : v->value.vec()) put<float>(out, static_cast<float>(x));
  }
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "SGUD") != 0) throw Error("not a checkpoint (bad magic)");
  Reader r(bytes);
  r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.kind = r.str();
  const std::string h = r.str();
  c.digest = r.get<std::uint64_t>();
  if (fnv1a(h) != c.digest) throw Error("checkpoint hyperparameter digest mismatch");
  try {
    c.hyper = io::Json::parse(h);
  } catch (const io::Json::parse_error& e) {
    throw Error(std::string("corrupt checkpoint hyperparameters: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = shape_size(shape);
    r.need(n * sizeof(float));
    Tensor t(shape);
    for (std::size_t k = 0; k < n; ++k) t[k] = static_cast<double>(r.get<float>());
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error("trailing bytes after checkpoint tensors");
  return c;
}

void save(const std::filesystem::path& path, const std::string& kind, const io::Json& hyper,
          const nn::ParamStore& params) {
  io::write_file_atomic(path, serialize(kind, hyper, params));
}

Checkpoint load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

void restore(const Checkpoint& ckpt, const std::string& kind, const io::Json& expected_hyper,
             nn::ParamStore& params) {
  if (ckpt.kind != kind) throw Error("checkpoint holds a " + ckpt.kind + " model, expected " + kind);
  if (digest(expected_hyper) != ckpt.digest)
    throw Error("checkpoint hyperparameters do not match the configured model; refusing to load");
  params.assign(ckpt.tensors);
}

}  // namespace segdiff::checkpoint
