#include "oarseg/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace oarseg {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

size_t element_size(NrrdType t) {
  switch (t) {
    case NrrdType::UInt8:
      return 1;
    case NrrdType::Int16:
      return 2;
    case NrrdType::Float32:
      return 4;
  }
  return 0;
}

NrrdType parse_type(const std::string& v, const std::string& where) {
  const std::string t = lower(v);
  if (t == "uchar" || t == "unsigned char" || t == "uint8" || t == "uint8_t") return NrrdType::UInt8;
  if (t == "short" || t == "short int" || t == "signed short" || t == "signed short int" ||
      t == "int16" || t == "int16_t")
    return NrrdType::Int16;
  if (t == "float") return NrrdType::Float32;
  throw ParseError(where + ": unsupported type '" + v + "'");
}

// "(a,b,c) (d,e,f) (g,h,i)" -> diagonal magnitudes.
Spacing parse_directions(const std::string& v, const std::string& where) {
  std::string s = v;
  for (char& c : s)
    if (c == '(' || c == ')' || c == ',') c = ' ';
  std::istringstream in(s);
  double m[9];
  for (double& x : m)
    if (!(in >> x)) throw ParseError(where + ": malformed space directions '" + v + "'");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (r != c && m[r * 3 + c] != 0.0)
        throw ParseError(where + ": non-diagonal space directions are not supported");
  Spacing sp{std::abs(m[0]), std::abs(m[4]), std::abs(m[8])};
  if (!(sp.x > 0 && sp.y > 0 && sp.z > 0)) throw ParseError(where + ": zero spacing");
  return sp;
}

struct RawFile {
  NrrdHeader header;
  std::vector<char> payload;
};

RawFile read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  RawFile f;
  f.header = parse_nrrd_header(in, path.string());
  std::filesystem::path source = path;
  std::ifstream detached;
  if (!f.header.data_file.empty()) {
    source = path.parent_path() / f.header.data_file;
    detached.open(source, std::ios::binary);
    if (!detached) throw IoError("cannot open data file " + source.string() + " named by " + path.string());
  }
  std::istream& data = f.header.data_file.empty() ? static_cast<std::istream&>(in) : detached;
  const auto start = data.tellg();
  data.seekg(0, std::ios::end);
  const auto end = data.tellg();
  data.seekg(start);
  const auto available = static_cast<uint64_t>(end - start);
  const uint64_t expected =
      static_cast<uint64_t>(f.header.sizes.count()) * element_size(f.header.type);
  if (available != expected)
    throw ParseError(source.string() + ": payload has " + std::to_string(available) +
                     " bytes, header sizes require " + std::to_string(expected));
  f.payload.resize(static_cast<size_t>(expected));
  data.read(f.payload.data(), static_cast<std::streamsize>(expected));
  if (!data) throw IoError("short read from " + source.string());
  return f;
}

template <typename T>
std::vector<T> decode(const std::vector<char>& bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void write_raw(const std::filesystem::path& path, const char* type, const Dims& d,
               const Spacing& s, const void* data, size_t bytes) {
  // A .nhdr path gets a detached header next to a .raw payload.
  const bool detached = path.extension() == ".nhdr";
  std::filesystem::path raw = path;
  raw.replace_extension(".raw");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  std::ostringstream h;
  h.precision(17);
  h << "NRRD0004\n"
    << "type: " << type << "\n"
    << "dimension: 3\n"
    << "sizes: " << d.x << " " << d.y << " " << d.z << "\n"
    << "spacings: " << s.x << " " << s.y << " " << s.z << "\n"
    << "endian: little\n"
    << "encoding: raw\n";
  if (detached) h << "data file: " << raw.filename().string() << "\n";
  h << "\n";
  const std::string hs = h.str();
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  if (detached) {
    out.close();
    out.open(raw, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + raw.string());
  }
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("failed writing " + (detached ? raw : path).string());
}

}  // namespace

NrrdHeader parse_nrrd_header(std::istream& in, const std::string& context) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(context + ": empty file");
  line = trim(line);
  if (line.size() != 8 || line.rfind("NRRD000", 0) != 0 || line[7] < '1' || line[7] > '5')
    throw ParseError(context + ": bad magic '" + line.substr(0, 16) + "'");

  NrrdHeader h;
  bool have_type = false, have_dim = false, have_sizes = false, have_encoding = false;
  bool little = true;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;
    if (line[0] == '#') continue;
    const std::string where = context + ":" + std::to_string(lineno);
    if (line.find(":=") != std::string::npos) continue;  // key/value annotations
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw ParseError(where + ": malformed header line '" + line + "'");
    const std::string key = lower(trim(line.substr(0, colon)));
    const std::string val = trim(line.substr(colon + 2));
    std::istringstream vs(val);
    if (key == "type") {
      h.type = parse_type(val, where);
      have_type = true;
    } else if (key == "dimension") {
      int d = 0;
      vs >> d;
      if (d != 3) throw ParseError(where + ": dimension must be 3, got '" + val + "'");
      have_dim = true;
    } else if (key == "sizes") {
      for (int a = 0; a < 3; ++a) {
        int64_t n = 0;
        if (!(vs >> n) || n < 1 || n > (int64_t{1} << 20))
          throw ParseError(where + ": invalid sizes '" + val + "'");
        h.sizes[a] = n;
      }
      std::string extra;
      if (vs >> extra) throw ParseError(where + ": sizes has more than 3 entries");
      have_sizes = true;
    } else if (key == "spacings") {
      for (int a = 0; a < 3; ++a)
        if (!(vs >> h.spacing[a]) || !(h.spacing[a] > 0))
          throw ParseError(where + ": invalid spacings '" + val + "'");
    } else if (key == "space directions") {
      h.spacing = parse_directions(val, where);
    } else if (key == "endian") {
      const std::string e = lower(val);
      if (e != "little" && e != "big") throw ParseError(where + ": invalid endian '" + val + "'");
      little = e == "little";
    } else if (key == "encoding") {
      const std::string e = lower(val);
      if (e != "raw") throw ParseError(where + ": unsupported encoding '" + val + "'");
      h.encoding = e;
      have_encoding = true;
    } else if (key == "data file" || key == "datafile") {
      if (val.empty() || val.find(' ') != std::string::npos || val == "LIST")
        throw ParseError(where + ": only a single detached data file is supported, got '" + val + "'");
      h.data_file = val;
    } else if (key == "line skip" || key == "lineskip" || key == "byte skip" || key == "byteskip") {
      if (val != "0") throw ParseError(where + ": unsupported field '" + key + "' = " + val);
    } else if (key == "space" || key == "space dimension" || key == "space origin" ||
               key == "kinds" || key == "content" || key == "centerings" || key == "centers" ||
               key == "space units" || key == "units" || key == "labels" ||
               key == "measurement frame" || key == "thicknesses" || key == "old min" ||
               key == "old max" || key == "min" || key == "max") {
      // Informational only.
    } else {
      throw ParseError(where + ": unsupported field '" + key + "'");
    }
  }
  if (!have_type || !have_dim || !have_sizes || !have_encoding)
    throw ParseError(context + ": header lacks one of type/dimension/sizes/encoding");
  if (!little && element_size(h.type) > 1)
    throw ParseError(context + ": big-endian payloads are not supported");
  return h;
}

AnyVolume read_volume(const std::filesystem::path& path) {
  RawFile f = read_raw(path);
  const Dims d = f.header.sizes;
  const Spacing s = f.header.spacing;
  switch (f.header.type) {
    case NrrdType::UInt8: {
      std::vector<uint8_t> v = decode<uint8_t>(f.payload);
      if (std::all_of(v.begin(), v.end(), [](uint8_t x) { return x <= 1; }))
        return Mask(d, s, std::move(v));
      return Volume(d, s, std::vector<float>(v.begin(), v.end()));
    }
    case NrrdType::Int16: {
      const std::vector<int16_t> v = decode<int16_t>(f.payload);
      return Volume(d, s, std::vector<float>(v.begin(), v.end()));
    }
    case NrrdType::Float32:
      return Volume(d, s, decode<float>(f.payload));
  }
  throw ParseError(path.string() + ": unreachable type");
}

Volume read_image(const std::filesystem::path& path) {
  AnyVolume any = read_volume(path);
  if (auto* v = std::get_if<Volume>(&any)) return std::move(*v);
  const Mask& m = std::get<Mask>(any);
  Volume v(m.dims(), m.spacing());
  for (int64_t i = 0; i < m.size(); ++i) v[i] = m[i];
  return v;
}

Mask read_mask(const std::filesystem::path& path) {
  AnyVolume any = read_volume(path);
  if (auto* m = std::get_if<Mask>(&any)) return std::move(*m);
  const Volume& v = std::get<Volume>(any);
  Mask m(v.dims(), v.spacing());
  for (int64_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0f;
  return m;
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  write_raw(path, "float", v.dims(), v.spacing(), v.data().data(), v.data().size_bytes());
}

void write_volume_int16(const Volume& v, const std::filesystem::path& path) {
  std::vector<int16_t> out(static_cast<size_t>(v.size()));
  for (int64_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<int16_t>(std::clamp(std::lround(v[i]), -32768L, 32767L));
  write_raw(path, "short", v.dims(), v.spacing(), out.data(), out.size() * sizeof(int16_t));
}

void write_mask(const Mask& m, const std::filesystem::path& path) {
  write_raw(path, "uchar", m.dims(), m.spacing(), m.data().data(), m.data().size_bytes());
}

// ---- model files -----------------------------------------------------------

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'O', 'A', 'R', 'U', 'N', 'E', 'T', '\0'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_str(const std::string& s) {
    put(static_cast<uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<uint8_t>& b, size_t end, std::string ctx)
      : b_(b), end_(end), ctx_(std::move(ctx)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str() {
    const auto n = get<uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_floats(float* out, size_t n) {
    if (n > (end_ - pos_) / sizeof(float)) fail("truncated tensor payload");
    std::memcpy(out, b_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& why) const {
    throw CorruptModelError(ctx_ + ": " + why + " at byte " + std::to_string(pos_));
  }

 private:
  void need(size_t n) {
    if (n > end_ - pos_) fail("unexpected end of data");
  }
  const std::vector<uint8_t>& b_;
  size_t end_;
  size_t pos_ = 0;
  std::string ctx_;
};

}  // namespace

std::vector<uint8_t> serialize_model(const ModelFile& m) {
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put(kModelVersion);
  w.put_str(std::string(structure_name(m.structure)));
  w.put_str(m.stage);
  w.put_str(config_to_json(m.config));
  const auto& params = m.model.params();
  w.put(static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_str(p.name);
    w.put(static_cast<uint32_t>(p.shape.size()));
    for (int64_t d : p.shape) w.put(static_cast<uint64_t>(d));
    for (float v : p.value) w.put(v);
  }
  w.put(fnv1a64(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

ModelFile deserialize_model(const std::vector<uint8_t>& bytes, const std::string& context) {
  if (bytes.size() < sizeof(kMagic) + sizeof(uint64_t))
    throw CorruptModelError(context + ": file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CorruptModelError(context + ": bad magic");
  const size_t body = bytes.size() - sizeof(uint64_t);
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (stored != fnv1a64(bytes.data(), body)) throw CorruptModelError(context + ": checksum mismatch");

  Reader r(bytes, body, context);
  for (size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
  const auto version = r.get<uint32_t>();
  if (version != kModelVersion) r.fail("unsupported format version " + std::to_string(version));
  const std::string sname = r.get_str();
  const auto sid = parse_structure(sname);
  if (!sid) r.fail("unknown structure '" + sname + "'");

  ModelFile m;
  m.structure = *sid;
  m.stage = r.get_str();
  if (m.stage != "loc" && m.stage != "seg") r.fail("unknown stage '" + m.stage + "'");
  try {
    m.config = parse_config(r.get_str(), context + " (config snapshot)");
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  m.model = nn::UNet<float>(m.config.train.unet, 0);
  auto& params = m.model.params();
  const auto count = r.get<uint32_t>();
  if (count != params.size())
    r.fail("tensor count " + std::to_string(count) + " does not match the declared network (" +
           std::to_string(params.size()) + ")");
  for (auto& p : params) {
    const std::string name = r.get_str();
    if (name != p.name) r.fail("expected tensor '" + p.name + "', found '" + name + "'");
    const auto rank = r.get<uint32_t>();
    if (rank != p.shape.size()) r.fail("rank mismatch for " + name);
    for (int64_t d : p.shape)
      if (r.get<uint64_t>() != static_cast<uint64_t>(d)) r.fail("shape mismatch for " + name);
    r.get_floats(p.value.data(), p.value.size());
  }
  if (r.pos() != body) r.fail("trailing bytes before checksum");
  return m;
}

void save_model(const ModelFile& m, const std::filesystem::path& path) {
  const auto bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing model " + path.string());
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, path.string());
}

// ---- metrics reports -------------------------------------------------------

std::string report_to_json_line(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["case"] = r.case_id;
  j["structure"] = r.structure;
  j["dsc"] = r.dsc;
  if (std::isinf(r.hd95))
    j["hd95"] = "inf";
  else
    j["hd95"] = r.hd95;
  j["ppv"] = r.ppv;
  j["sen"] = r.sen;
  j["pred_voxels"] = r.pred_voxels;
  j["gt_voxels"] = r.gt_voxels;
  j["frame"] = r.frame;
  j["points"] = "surface6";
  j["percentile"] = "nearest_rank";
  return j.dump();
}

MetricsReport parse_report_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricsReport r;
    r.case_id = j.at("case").get<std::string>();
    r.structure = j.at("structure").get<std::string>();
    r.dsc = j.at("dsc").get<double>();
    const auto& h = j.at("hd95");
    if (h.is_string()) {
      if (h.get<std::string>() != "inf") throw ParseError("report: bad hd95 value");
      r.hd95 = std::numeric_limits<double>::infinity();
    } else {
      r.hd95 = h.get<double>();
    }
    r.ppv = j.at("ppv").get<double>();
    r.sen = j.at("sen").get<double>();
    r.pred_voxels = j.at("pred_voxels").get<int64_t>();
    r.gt_voxels = j.at("gt_voxels").get<int64_t>();
    r.frame = j.value("frame", std::string("iso"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report line: ") + e.what());
  }
}

}  // namespace oarseg
