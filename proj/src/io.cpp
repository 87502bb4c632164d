#include "xfedit/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xfedit/config.hpp"
#include "xfedit/errors.hpp"
#include "xfedit/hash.hpp"

static_assert(std::endian::native == std::endian::little, "payloads are written as native LE");

namespace xfedit::io {

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I64: return 8;
    case DType::U8: return 1;
  }
  throw IoError("unknown dtype " + std::to_string(static_cast<int>(d)));
}

std::uint64_t Array::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

template <typename T>
Array make_array(DType dtype, std::vector<std::uint64_t> dims, const T* data, std::size_t n) {
  Array a{dtype, std::move(dims), std::vector<std::byte>(n * sizeof(T))};
  if (n) std::memcpy(a.payload.data(), data, n * sizeof(T));
  return a;
}

template <typename T>
std::vector<T> values_of(const Array& a, DType want, const std::string& name) {
  if (a.dtype != want) throw IoError("array '" + name + "' has unexpected dtype");
  std::vector<T> out(a.element_count());
  if (!out.empty()) std::memcpy(out.data(), a.payload.data(), out.size() * sizeof(T));
  return out;
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::byte> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::byte>& b) : bytes_(b) {}
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::byte* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw IoError("array file truncated");
    const std::byte* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::byte>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::byte> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> chars((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(chars.size());
  if (!chars.empty()) std::memcpy(out.data(), chars.data(), chars.size());
  return out;
}

void write_bytes(const fs::path& path, const std::vector<std::byte>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint64_t digest(const std::byte* p, std::size_t n) {
  Fnv1a h;
  h.update(std::span<const std::byte>(p, n));
  return h.digest();
}

}  // namespace

void ArrayFile::put(const std::string& name, Array array) {
  if (name.empty() || name.size() > 0xffff) throw IoError("array name must be 1..65535 bytes");
  if (array.dims.size() > 255) throw IoError("array '" + name + "' has too many dimensions");
  if (array.payload.size() != array.element_count() * dtype_size(array.dtype))
    throw IoError("array '" + name + "' payload does not match its shape");
  arrays_[name] = std::move(array);
}

void ArrayFile::put_matrix(const std::string& name, const MatrixX<float>& m) {
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  put(name, make_array(DType::F32, {static_cast<std::uint64_t>(m.rows()),
                                    static_cast<std::uint64_t>(m.cols())},
                       rm.data(), static_cast<std::size_t>(rm.size())));
}

void ArrayFile::put_video(const std::string& name, const Video& v) {
  std::vector<float> flat;
  flat.reserve(static_cast<std::size_t>(v.data().size()));
  for (Index f = 0; f < v.frames(); ++f)
    for (Index c = 0; c < v.channels(); ++c)
      for (Index y = 0; y < v.height(); ++y)
        for (Index x = 0; x < v.width(); ++x) flat.push_back(v(f, c, y, x));
  put(name, make_array(DType::F32,
                       {static_cast<std::uint64_t>(v.frames()),
                        static_cast<std::uint64_t>(v.channels()),
                        static_cast<std::uint64_t>(v.height()),
                        static_cast<std::uint64_t>(v.width())},
                       flat.data(), flat.size()));
}

void ArrayFile::put_doubles(const std::string& name, const std::vector<double>& values) {
  put(name, make_array(DType::F64, {values.size()}, values.data(), values.size()));
}

void ArrayFile::put_text(const std::string& name, const std::string& text) {
  put(name, make_array(DType::U8, {text.size()}, text.data(), text.size()));
}

const Array& ArrayFile::get(const std::string& name) const {
  const auto it = arrays_.find(name);
  if (it == arrays_.end()) throw IoError("array '" + name + "' not found");
  return it->second;
}

MatrixX<float> ArrayFile::matrix(const std::string& name) const {
  const Array& a = get(name);
  if (a.dims.size() != 2) throw IoError("array '" + name + "' is not a matrix");
  const auto v = values_of<float>(a, DType::F32, name);
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      v.data(), static_cast<Index>(a.dims[0]), static_cast<Index>(a.dims[1]));
}

Video ArrayFile::video(const std::string& name) const {
  const Array& a = get(name);
  if (a.dims.size() != 4) throw IoError("array '" + name + "' is not a video");
  const auto v = values_of<float>(a, DType::F32, name);
  Video out(static_cast<Index>(a.dims[0]), static_cast<Index>(a.dims[1]),
            static_cast<Index>(a.dims[2]), static_cast<Index>(a.dims[3]));
  std::size_t i = 0;
  for (Index f = 0; f < out.frames(); ++f)
    for (Index c = 0; c < out.channels(); ++c)
      for (Index y = 0; y < out.height(); ++y)
        for (Index x = 0; x < out.width(); ++x) out(f, c, y, x) = v[i++];
  return out;
}

std::vector<double> ArrayFile::doubles(const std::string& name) const {
  return values_of<double>(get(name), DType::F64, name);
}

std::string ArrayFile::text(const std::string& name) const {
  const auto v = values_of<char>(get(name), DType::U8, name);
  return std::string(v.begin(), v.end());
}

std::vector<std::byte> ArrayFile::serialize() const {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.pod(static_cast<std::uint64_t>(arrays_.size()));
  for (const auto& [name, a] : arrays_) {
    w.pod(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.pod(static_cast<std::uint8_t>(a.dtype));
    w.pod(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) w.pod(d);
    w.raw(a.payload.data(), a.payload.size());
  }
  w.pod(digest(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

ArrayFile ArrayFile::deserialize(const std::vector<std::byte>& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8) throw IoError("array file truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("bad array file magic");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != digest(bytes.data(), body)) throw IoError("array file checksum mismatch");

  const std::vector<std::byte> content(bytes.begin(), bytes.begin() + static_cast<long>(body));
  Reader r(content);
  r.take(sizeof(kMagic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw IoError("unsupported array file version " + std::to_string(version));
  const auto count = r.pod<std::uint64_t>();
  ArrayFile file;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint16_t>();
    const auto* np = r.take(name_len);
    std::string name(reinterpret_cast<const char*>(np), name_len);
    Array a;
    a.dtype = static_cast<DType>(r.pod<std::uint8_t>());
    const auto ndim = r.pod<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) a.dims.push_back(r.pod<std::uint64_t>());
    const std::size_t n = a.element_count() * dtype_size(a.dtype);
    const auto* p = r.take(n);
    a.payload.assign(p, p + n);
    if (file.contains(name)) throw IoError("duplicate array '" + name + "'");
    file.put(name, std::move(a));
  }
  if (r.pos() != content.size()) throw IoError("trailing bytes in array file");
  return file;
}

void ArrayFile::save(const fs::path& path) const { write_bytes(path, serialize()); }

ArrayFile ArrayFile::load(const fs::path& path) { return deserialize(read_bytes(path)); }

// ---------------------------------------------------------------------------

void save_checkpoint(const ToyUNet& model, const fs::path& path) {
  ArrayFile file;
  const Json meta{{"format", "xfedit-checkpoint"},
                  {"version", kCheckpointVersion},
                  {"model", to_json(model.config())}};
  file.put_text("__meta__", meta.dump());
  const auto& ps = model.parameters();
  for (Index i = 0; i < ps.size(); ++i) file.put_matrix(ps.name(i), ps[i]);
  file.save(path);
}

std::shared_ptr<ToyUNet> load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  const ArrayFile file = ArrayFile::load(path);
  Json meta;
  try {
    meta = Json::parse(file.text("__meta__"));
  } catch (const Json::exception& e) {
    throw IoError("checkpoint metadata unreadable: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "xfedit-checkpoint")
    throw IoError("not a checkpoint: " + path.string());
  if (meta.value("version", -1) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version in " + path.string());
  auto model = std::make_shared<ToyUNet>(unet_config_from_json(meta.at("model")));
  auto& ps = model->mutable_parameters();
  if (static_cast<Index>(file.arrays().size()) != ps.size() + 1)
    throw ShapeError("checkpoint has " + std::to_string(file.arrays().size() - 1) +
                     " weight arrays, model needs " + std::to_string(ps.size()));
  for (Index i = 0; i < ps.size(); ++i) {
    MatrixX<float> m = file.matrix(ps.name(i));
    if (m.rows() != ps[i].rows() || m.cols() != ps[i].cols())
      throw ShapeError("checkpoint weight '" + ps.name(i) + "' has the wrong shape");
    ps[i] = std::move(m);
  }
  return model;
}

std::uint64_t file_hash(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return digest(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------

namespace {
std::string indexed(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03zu", prefix, i);
  return buf;
}
}  // namespace

void save_inversion(const InversionRecord& rec, const fs::path& dir) {
  fs::create_directories(dir);
  ArrayFile traj;
  for (std::size_t i = 0; i < rec.trajectory.size(); ++i)
    traj.put_video(indexed("latent_", i), rec.trajectory[i]);
  traj.save(dir / "trajectory.xfa");

  ArrayFile emb;
  emb.put_matrix("source", rec.source_embedding.tokens());
  for (std::size_t i = 0; i < rec.null_embeddings.size(); ++i)
    emb.put_matrix(indexed("null_", i), rec.null_embeddings[i].tokens());
  emb.put_doubles("initial_loss", rec.initial_loss);
  emb.put_doubles("final_loss", rec.per_step_loss);
  emb.save(dir / "embeddings.xfa");

  const Json manifest{{"format", "xfedit-inversion"},
                      {"version", 1},
                      {"source_prompt", rec.source_prompt},
                      {"steps", rec.steps()},
                      {"schedule_hash", rec.schedule_hash}};
  write_text(dir / "manifest.json", dump_canonical(manifest));
}

InversionRecord load_inversion(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("inversion record not found: " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(read_text(dir / "manifest.json"));
  } catch (const Json::exception& e) {
    throw IoError("inversion manifest unreadable: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "xfedit-inversion")
    throw IoError("not an inversion record: " + dir.string());
  InversionRecord rec;
  rec.source_prompt = manifest.at("source_prompt").get<std::string>();
  rec.schedule_hash = manifest.at("schedule_hash").get<std::uint64_t>();
  const auto steps = manifest.at("steps").get<std::size_t>();
  const ArrayFile traj = ArrayFile::load(dir / "trajectory.xfa");
  const ArrayFile emb = ArrayFile::load(dir / "embeddings.xfa");
  for (std::size_t i = 0; i <= steps; ++i) rec.trajectory.push_back(traj.video(indexed("latent_", i)));
  rec.source_embedding = TextEmbedding(emb.matrix("source"));
  for (std::size_t i = 0; i < steps; ++i)
    rec.null_embeddings.emplace_back(emb.matrix(indexed("null_", i)));
  rec.initial_loss = emb.doubles("initial_loss");
  rec.per_step_loss = emb.doubles("final_loss");
  return rec;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace xfedit::io
