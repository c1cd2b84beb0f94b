#include "ms4/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "ms4/errors.hpp"
#include "ms4/io.hpp"

namespace ms4 {
namespace {

template <typename Derived>
void write_array(std::ostream& out, const std::string& name,
                 const Eigen::MatrixBase<Derived>& a) {
  out << "array " << name << ' ' << a.rows() << ' ' << a.cols() << '\n';
  std::string line;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    line.clear();
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (c > 0) line += ',';
      append_double(line, a(r, c));
    }
    line += '\n';
    out << line;
  }
}

const char* eigen_init_name(EigenInit e) {
  return e == EigenInit::kInverse ? "inverse" : "linear";
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ":" + std::to_string(line_no_) + ": " + what, line_no_);
  }

  template <typename T>
  T number(std::string_view text) const {
    T value{};
    if constexpr (std::is_floating_point_v<T>) {
      if (!parse_double(text, value)) fail("bad number '" + std::string(text) + "'");
    } else {
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        fail("bad integer '" + std::string(text) + "'");
      }
    }
    return value;
  }

 private:
  std::istream& in_;
  std::string source_;
  int line_no_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  const ModelConfig& c = ckpt.model.config;
  out << "format_version " << kCheckpointFormatVersion << '\n'
      << "features " << c.features << '\n'
      << "hidden " << c.hidden << '\n'
      << "state " << c.state << '\n'
      << "layers " << c.layers << '\n'
      << "classes " << c.classes << '\n'
      << "head_hidden " << c.head_width() << '\n'
      << "normalized " << (c.normalized ? 1 : 0) << '\n'
      << "dropout " << format_double(c.dropout) << '\n'
      << "dt_min " << format_double(c.dt_min) << '\n'
      << "dt_max " << format_double(c.dt_max) << '\n'
      << "eigen_init " << eigen_init_name(c.eigen_init) << '\n'
      << "input_stats " << (ckpt.input_stats ? 1 : 0) << '\n';
  if (ckpt.input_stats) {
    write_array(out, "input.mean", ckpt.input_stats->mean);
    write_array(out, "input.std", ckpt.input_stats->stddev);
  }
  ckpt.model.visit([&](const std::string& name, const auto& arr) {
    write_array(out, name, arr);
  });
  out << "end\n";
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing", 0);
  save_checkpoint(ckpt, out);
  if (!out) throw ParseError("write failed: " + path.string(), 0);
}

Checkpoint load_checkpoint(std::istream& in, const std::string& source) {
  Reader reader(in, source);
  std::string line;
  std::map<std::string, std::string> keys;
  std::map<std::string, Eigen::MatrixXd> arrays;
  bool ended = false;
  std::vector<std::string_view> fields;
  while (reader.next(line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "end") {
      ended = true;
      break;
    }
    if (key == "array") {
      std::string name, rows_text, cols_text;
      ss >> name >> rows_text >> cols_text;
      const auto rows = reader.number<long>(rows_text);
      const auto cols = reader.number<long>(cols_text);
      if (rows < 0 || cols < 0) reader.fail("negative array shape");
      Eigen::MatrixXd a(rows, cols);
      for (long r = 0; r < rows; ++r) {
        if (!reader.next(line)) reader.fail("truncated array " + name);
        split_fields(line, ',', fields);
        if (static_cast<long>(fields.size()) != cols) {
          reader.fail("array " + name + " row has " + std::to_string(fields.size()) +
                      " values, expected " + std::to_string(cols));
        }
        for (long c = 0; c < cols; ++c) a(r, c) = reader.number<double>(fields[c]);
      }
      if (!arrays.emplace(name, std::move(a)).second) {
        reader.fail("duplicate array " + name);
      }
      continue;
    }
    std::string value;
    if (!(ss >> value)) reader.fail("key '" + key + "' has no value");
    keys[key] = value;
  }
  if (!ended) reader.fail("missing 'end' marker");

  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = keys.find(key);
    if (it == keys.end()) reader.fail("missing key '" + key + "'");
    return it->second;
  };
  if (reader.number<int>(get("format_version")) != kCheckpointFormatVersion) {
    reader.fail("unsupported format_version " + get("format_version"));
  }
  ModelConfig c;
  c.features = reader.number<int>(get("features"));
  c.hidden = reader.number<int>(get("hidden"));
  c.state = reader.number<int>(get("state"));
  c.layers = reader.number<int>(get("layers"));
  c.classes = reader.number<int>(get("classes"));
  c.head_hidden = reader.number<int>(get("head_hidden"));
  c.normalized = reader.number<int>(get("normalized")) != 0;
  c.dropout = reader.number<double>(get("dropout"));
  c.dt_min = reader.number<double>(get("dt_min"));
  c.dt_max = reader.number<double>(get("dt_max"));
  const std::string& init = get("eigen_init");
  if (init != "linear" && init != "inverse") reader.fail("unknown eigen_init " + init);
  c.eigen_init = init == "inverse" ? EigenInit::kInverse : EigenInit::kLinear;

  Checkpoint ckpt;
  try {
    ckpt.model = init_model<double>(c, 0);
  } catch (const ParameterError& e) {
    reader.fail(std::string("invalid hyperparameters: ") + e.what());
  }
  ckpt.model.visit([&](const std::string& name, auto& arr) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) reader.fail("missing array " + name);
    if (it->second.rows() != arr.rows() || it->second.cols() != arr.cols()) {
      reader.fail("array " + name + " has the wrong shape");
    }
    arr = it->second;
    arrays.erase(it);
  });
  if (reader.number<int>(get("input_stats")) != 0) {
    const auto mean = arrays.find("input.mean");
    const auto sd = arrays.find("input.std");
    if (mean == arrays.end() || sd == arrays.end()) reader.fail("missing input stats");
    if (mean->second.rows() != 1 || mean->second.cols() != c.features ||
        sd->second.rows() != 1 || sd->second.cols() != c.features) {
      reader.fail("input stats have the wrong shape");
    }
    ckpt.input_stats = FeatureStats{mean->second.row(0), sd->second.row(0)};
    arrays.erase("input.mean");
    arrays.erase("input.std");
  }
  if (!arrays.empty()) reader.fail("unexpected array " + arrays.begin()->first);
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return load_checkpoint(in, path.string());
}

}  // namespace ms4
