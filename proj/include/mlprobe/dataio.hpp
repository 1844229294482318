#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mlprobe/error.hpp"
#include "mlprobe/matrix.hpp"

namespace mlprobe {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Task catalog
// ---------------------------------------------------------------------------

enum class Level { surface, syntactic, semantic };

inline std::string_view to_string(Level l) {
  switch (l) {
  case Level::surface:
    return "surface";
  case Level::syntactic:
    return "syntactic";
  case Level::semantic:
    return "semantic";
  }
  return "?";
}

inline Level parse_level(std::string_view s) {
  if (s == "surface")
    return Level::surface;
  if (s == "syntactic")
    return Level::syntactic;
  if (s == "semantic")
    return Level::semantic;
  throw DataError("unknown linguistic level '" + std::string(s) + "'");
}

struct TaskSpec {
  std::string name;
  Level level = Level::surface;
  int n_classes = 2;
  /// label string -> dense class id. May be empty for a catalog entry whose
  /// labels are only known once data is ingested.
  std::map<std::string, int> label_map;

  /// Throws DataError unless n_classes >= 2 and label_map (when present) is a
  /// bijection onto 0..n_classes-1.
  void validate() const {
    if (n_classes < 2)
      throw DataError("task '" + name + "': n_classes must be >= 2");
    if (label_map.empty())
      return;
    if (static_cast<int>(label_map.size()) != n_classes)
      throw DataError("task '" + name + "': label map has " + std::to_string(label_map.size()) +
                      " labels, expected " + std::to_string(n_classes));
    std::vector<bool> seen(n_classes, false);
    for (const auto &[label, id] : label_map) {
      if (id < 0 || id >= n_classes || seen[id])
        throw DataError("task '" + name + "': label '" + label + "' has invalid or duplicate id " +
                        std::to_string(id));
      seen[id] = true;
    }
  }

  /// Inverse of label_map, indexed by class id.
  std::vector<std::string> labels_by_id() const {
    std::vector<std::string> out(n_classes);
    for (const auto &[label, id] : label_map)
      out.at(id) = label;
    return out;
  }
};

/// The ten sentence-level probing tasks, grouped by linguistic level.
inline const std::vector<TaskSpec> &builtin_tasks() {
  static const std::vector<TaskSpec> tasks = {
      {"SentLen", Level::surface, 6, {}},      {"WC", Level::surface, 1000, {}},
      {"TreeDepth", Level::syntactic, 7, {}},  {"TopConst", Level::syntactic, 20, {}},
      {"BShift", Level::syntactic, 2, {}},     {"Tense", Level::semantic, 2, {}},
      {"SubjNum", Level::semantic, 2, {}},     {"ObjNum", Level::semantic, 2, {}},
      {"SOMO", Level::semantic, 2, {}},        {"CoordInv", Level::semantic, 2, {}},
  };
  return tasks;
}

inline std::optional<TaskSpec> find_builtin_task(std::string_view name) {
  for (const auto &t : builtin_tasks())
    if (t.name == name)
      return t;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// PRBE v1 container
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kPrbeMagic = {'P', 'R', 'B', 'E'};
inline constexpr std::uint32_t kPrbeVersion = 1;
inline constexpr std::uint16_t kPrbeDtypeF32 = 1;
/// magic(4) version(4) n_rows(4) dim(4) dtype(2) layer(2)
inline constexpr std::size_t kPrbeHeaderBytes = 20;

struct PrbeHeader {
  std::uint32_t version = kPrbeVersion;
  std::uint32_t n_rows = 0;
  std::uint32_t dim = 0;
  std::uint16_t dtype = kPrbeDtypeF32;
  std::uint16_t layer = 0;
};

/// n_rows x dim f32 values for one (task, split, layer).
struct EmbeddingMatrix {
  std::uint16_t layer = 0;
  Matrix<float> values;

  std::size_t n_rows() const noexcept { return values.rows(); }
  std::size_t dim() const noexcept { return values.cols(); }

  friend bool operator==(const EmbeddingMatrix &, const EmbeddingMatrix &) = default;
};

namespace detail {

inline void put_u16(std::string &out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char *p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

inline std::uint16_t get_u16(const unsigned char *p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

template <typename T> void require_finite(const Matrix<T> &m, std::string_view context) {
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!std::isfinite(m.flat()[i]))
      throw FormatError(FormatError::Kind::non_finite,
                        std::string(context) + ": non-finite value at row " +
                            std::to_string(i / std::max<std::size_t>(m.cols(), 1)) + ", column " +
                            std::to_string(i % std::max<std::size_t>(m.cols(), 1)));
}

} // namespace detail

/// Appends one PRBE section (header + payload) to `out`.
inline void encode_prbe(const Matrix<float> &values, std::uint16_t layer, std::string &out) {
  detail::require_finite(values, "PRBE encode");
  if (values.rows() > UINT32_MAX || values.cols() > UINT32_MAX)
    throw ShapeError("PRBE encode: matrix too large");
  out.append(kPrbeMagic.data(), kPrbeMagic.size());
  detail::put_u32(out, kPrbeVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(values.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(values.cols()));
  detail::put_u16(out, kPrbeDtypeF32);
  detail::put_u16(out, layer);
  for (float v : values.flat())
    detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
}

/// Decodes one section starting at `offset`; advances `offset` past it.
/// `context` prefixes error messages (usually the file path).
inline EmbeddingMatrix decode_prbe(std::string_view bytes, std::size_t &offset,
                                   std::string_view context) {
  using K = FormatError::Kind;
  const std::string ctx(context);
  const std::size_t avail = bytes.size() - offset;
  if (avail < 4 || bytes.substr(offset, 4) != std::string_view(kPrbeMagic.data(), 4))
    throw FormatError(K::bad_magic, ctx + ": bad magic (expected \"PRBE\")");
  if (avail < kPrbeHeaderBytes)
    throw FormatError(K::truncated, ctx + ": truncated header (" + std::to_string(avail) +
                                        " of " + std::to_string(kPrbeHeaderBytes) + " bytes)");
  const auto *p = reinterpret_cast<const unsigned char *>(bytes.data() + offset);
  PrbeHeader h;
  h.version = detail::get_u32(p + 4);
  h.n_rows = detail::get_u32(p + 8);
  h.dim = detail::get_u32(p + 12);
  h.dtype = detail::get_u16(p + 16);
  h.layer = detail::get_u16(p + 18);
  if (h.version != kPrbeVersion)
    throw FormatError(K::unsupported_version,
                      ctx + ": unsupported PRBE version " + std::to_string(h.version));
  if (h.dtype != kPrbeDtypeF32)
    throw FormatError(K::unsupported_dtype,
                      ctx + ": unsupported dtype code " + std::to_string(h.dtype));
  const std::uint64_t count = std::uint64_t(h.n_rows) * h.dim;
  const std::uint64_t payload = count * 4;
  if (avail - kPrbeHeaderBytes < payload)
    throw FormatError(K::truncated, ctx + ": truncated payload: header claims " +
                                        std::to_string(h.n_rows) + "x" + std::to_string(h.dim) +
                                        " values (" + std::to_string(payload) + " bytes), found " +
                                        std::to_string(avail - kPrbeHeaderBytes));
  std::vector<float> values(count);
  const unsigned char *q = p + kPrbeHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i, q += 4)
    values[i] = std::bit_cast<float>(detail::get_u32(q));
  EmbeddingMatrix m{h.layer, Matrix<float>(h.n_rows, h.dim, std::move(values))};
  detail::require_finite(m.values, ctx);
  offset += kPrbeHeaderBytes + payload;
  return m;
}

inline std::string read_file_bytes(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

/// Writes `bytes` to a sibling temp file, then renames over `path`.
inline void write_file_atomic(const fs::path &path, std::string_view bytes) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw FormatError(FormatError::Kind::io, "cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw FormatError(FormatError::Kind::io, "write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline void validate(const EmbeddingMatrix &m) {
  if (m.n_rows() == 0 || m.dim() == 0)
    throw DataError("embedding matrix must have at least one row and one column");
  detail::require_finite(m.values, "embedding matrix");
}

inline void write_embeddings(const EmbeddingMatrix &m, const fs::path &path) {
  validate(m);
  std::string bytes;
  bytes.reserve(kPrbeHeaderBytes + m.values.size() * 4);
  encode_prbe(m.values, m.layer, bytes);
  write_file_atomic(path, bytes);
}

inline EmbeddingMatrix read_embeddings(const fs::path &path) {
  const std::string bytes = read_file_bytes(path);
  std::size_t offset = 0;
  EmbeddingMatrix m = decode_prbe(bytes, offset, path.string());
  if (offset != bytes.size())
    throw DataError(path.string() + ": " + std::to_string(bytes.size() - offset) +
                    " trailing bytes after PRBE payload");
  validate(m);
  return m;
}

/// Reads only the 20-byte header, for manifest integrity checks.
inline PrbeHeader read_prbe_header(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "'");
  std::array<char, kPrbeHeaderBytes> buf{};
  in.read(buf.data(), buf.size());
  const std::string_view head(buf.data(), static_cast<std::size_t>(in.gcount()));
  if (head.size() < 4 || head.substr(0, 4) != std::string_view(kPrbeMagic.data(), 4))
    throw FormatError(FormatError::Kind::bad_magic, path.string() + ": bad magic");
  if (head.size() < kPrbeHeaderBytes)
    throw FormatError(FormatError::Kind::truncated, path.string() + ": truncated header");
  const auto *p = reinterpret_cast<const unsigned char *>(buf.data());
  return {detail::get_u32(p + 4), detail::get_u32(p + 8), detail::get_u32(p + 12),
          detail::get_u16(p + 16), detail::get_u16(p + 18)};
}

// ---------------------------------------------------------------------------
// Labels and SentEval-style text
// ---------------------------------------------------------------------------

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
  case Split::train:
    return "train";
  case Split::val:
    return "val";
  case Split::test:
    return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train")
    return Split::train;
  if (s == "val")
    return Split::val;
  if (s == "test")
    return Split::test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

struct LabelVector {
  std::vector<int> class_ids;
  std::size_t n_rows() const noexcept { return class_ids.size(); }
};

struct LabeledSentence {
  int class_id;
  std::string sentence;
};

using SentEvalData = std::map<Split, std::vector<LabeledSentence>>;

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

inline std::string_view chomp(std::string_view line) {
  if (!line.empty() && line.back() == '\r')
    line.remove_suffix(1);
  return line;
}

inline std::optional<Split> senteval_split(std::string_view tag) {
  if (tag == "tr")
    return Split::train;
  if (tag == "va")
    return Split::val;
  if (tag == "te")
    return Split::test;
  return std::nullopt;
}

template <typename Fn> void for_each_senteval_line(const fs::path &path, Fn &&fn) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open SentEval file '" + path.string() + "'");
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = chomp(raw);
    if (line.empty())
      continue;
    const auto fields = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3)
      throw DataError(where + ": expected 3 tab-separated fields, found " +
                      std::to_string(fields.size()));
    const auto split = senteval_split(fields[0]);
    if (!split)
      throw DataError(where + ": unknown split tag '" + std::string(fields[0]) +
                      "' (expected tr, va or te)");
    fn(*split, fields[1], fields[2], where);
  }
}

} // namespace detail

/// Parses a probing-task file: one example per line, `<tag>\t<label>\t<sentence>`
/// with tag in {tr, va, te}. Labels resolve through `spec.label_map`; order is
/// preserved within each split.
inline SentEvalData parse_senteval(const fs::path &path, const TaskSpec &spec) {
  SentEvalData out;
  detail::for_each_senteval_line(
      path, [&](Split split, std::string_view label, std::string_view sentence, const std::string &where) {
        const auto it = spec.label_map.find(std::string(label));
        if (it == spec.label_map.end())
          throw DataError(where + ": label '" + std::string(label) + "' not in label map of task '" +
                          spec.name + "'");
        out[split].push_back({it->second, std::string(sentence)});
      });
  return out;
}

/// Distinct labels of a probing file, sorted, mapped to 0..n-1.
inline std::map<std::string, int> infer_label_map(const fs::path &path) {
  std::map<std::string, int> labels;
  detail::for_each_senteval_line(path, [&](Split, std::string_view label, std::string_view,
                                           const std::string &) { labels.emplace(label, 0); });
  int next = 0;
  for (auto &[_, id] : labels)
    id = next++;
  return labels;
}

inline std::vector<std::size_t> class_counts(std::span<const int> ids, int n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (int id : ids)
    counts.at(id) += 1;
  return counts;
}

/// Balance is checked, not enforced: returns a warning message per split whose
/// class counts are not all equal.
inline std::vector<std::string> balance_warnings(const SentEvalData &data, const TaskSpec &spec) {
  std::vector<std::string> warnings;
  for (const auto &[split, rows] : data) {
    std::vector<int> ids;
    ids.reserve(rows.size());
    for (const auto &r : rows)
      ids.push_back(r.class_id);
    const auto counts = class_counts(ids, spec.n_classes);
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    if (*lo != *hi)
      warnings.push_back("task '" + spec.name + "' split " + std::string(to_string(split)) +
                         " is unbalanced: class counts range " + std::to_string(*lo) + ".." +
                         std::to_string(*hi));
  }
  return warnings;
}

/// Sidecar TSV: one `<class_id>\t<original_label>` line per example.
inline void write_labels(const fs::path &path, std::span<const LabeledSentence> rows,
                         const TaskSpec &spec) {
  const auto names = spec.labels_by_id();
  std::string out;
  for (const auto &r : rows)
    out += std::to_string(r.class_id) + "\t" + names.at(r.class_id) + "\n";
  write_file_atomic(path, out);
}

inline LabelVector read_labels(const fs::path &path, const TaskSpec &spec) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open label file '" + path.string() + "'");
  LabelVector out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::chomp(raw);
    if (line.empty())
      continue;
    const auto fields = detail::split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 2)
      throw DataError(where + ": expected <class_id>\\t<label>");
    int id = -1;
    try {
      std::size_t used = 0;
      id = std::stoi(std::string(fields[0]), &used);
      if (used != fields[0].size())
        id = -1;
    } catch (const std::exception &) {
      id = -1;
    }
    if (id < 0 || id >= spec.n_classes)
      throw DataError(where + ": class id '" + std::string(fields[0]) + "' outside [0, " +
                      std::to_string(spec.n_classes) + ")");
    if (!spec.label_map.empty()) {
      const auto it = spec.label_map.find(std::string(fields[1]));
      if (it == spec.label_map.end() || it->second != id)
        throw DataError(where + ": label '" + std::string(fields[1]) +
                        "' disagrees with the task label map");
    }
    out.class_ids.push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and dataset assembly
// ---------------------------------------------------------------------------

struct ManifestEntry {
  Split split;
  int layer;
  fs::path embedding_path;
  std::size_t row_count;
};

/// Index of the PRBE files and label sidecars for one task. Relative paths
/// are resolved against `base_dir` (the directory holding the manifest).
struct Manifest {
  TaskSpec task;
  std::size_t dim = 0;
  std::vector<int> layers;
  std::vector<ManifestEntry> entries;
  std::map<Split, fs::path> labels_paths;
  fs::path base_dir;

  fs::path resolve(const fs::path &p) const { return p.is_absolute() ? p : base_dir / p; }

  const ManifestEntry *find(Split split, int layer) const {
    for (const auto &e : entries)
      if (e.split == split && e.layer == layer)
        return &e;
    return nullptr;
  }
};

inline nlohmann::json to_json(const TaskSpec &t) {
  nlohmann::json label_map = nlohmann::json::object();
  for (const auto &[label, id] : t.label_map)
    label_map[label] = id;
  return {{"name", t.name},
          {"level", to_string(t.level)},
          {"n_classes", t.n_classes},
          {"label_map", label_map}};
}

inline TaskSpec task_from_json(const nlohmann::json &j) {
  TaskSpec t;
  t.name = j.at("name").get<std::string>();
  t.level = parse_level(j.at("level").get<std::string>());
  t.n_classes = j.at("n_classes").get<int>();
  if (j.contains("label_map"))
    for (const auto &[label, id] : j.at("label_map").items())
      t.label_map[label] = id.get<int>();
  t.validate();
  return t;
}

inline nlohmann::json to_json(const Manifest &m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto &e : m.entries)
    entries.push_back({{"split", to_string(e.split)},
                       {"layer", e.layer},
                       {"embedding_path", e.embedding_path.generic_string()},
                       {"row_count", e.row_count}});
  nlohmann::json labels = nlohmann::json::object();
  for (const auto &[split, path] : m.labels_paths)
    labels[std::string(to_string(split))] = path.generic_string();
  return {{"task", to_json(m.task)},
          {"dim", m.dim},
          {"layers", m.layers},
          {"entries", entries},
          {"labels_paths", labels}};
}

/// Parses a manifest document. Structural errors surface as DataError.
inline Manifest manifest_from_json(const nlohmann::json &j, const fs::path &base_dir) {
  try {
    Manifest m;
    m.base_dir = base_dir;
    m.task = task_from_json(j.at("task"));
    m.dim = j.at("dim").get<std::size_t>();
    m.layers = j.at("layers").get<std::vector<int>>();
    for (const auto &e : j.at("entries"))
      m.entries.push_back({parse_split(e.at("split").get<std::string>()), e.at("layer").get<int>(),
                           e.at("embedding_path").get<std::string>(),
                           e.at("row_count").get<std::size_t>()});
    for (const auto &[split, path] : j.at("labels_paths").items())
      m.labels_paths[parse_split(split)] = path.get<std::string>();
    return m;
  } catch (const nlohmann::json::exception &e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  }
}

inline Manifest read_manifest(const fs::path &path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception &e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void write_manifest(const Manifest &m, const fs::path &path) {
  write_file_atomic(path, to_json(m).dump(2) + "\n");
}

/// Every referenced file exists and its header agrees with the manifest.
inline void verify_manifest(const Manifest &m) {
  for (const auto &e : m.entries) {
    const fs::path p = m.resolve(e.embedding_path);
    if (!fs::exists(p))
      throw DataError("manifest references missing file '" + p.string() + "'");
    const PrbeHeader h = read_prbe_header(p);
    if (h.n_rows != e.row_count || h.dim != m.dim || h.layer != e.layer)
      throw DataError(p.string() + ": header (rows " + std::to_string(h.n_rows) + ", dim " +
                      std::to_string(h.dim) + ", layer " + std::to_string(h.layer) +
                      ") disagrees with manifest (rows " + std::to_string(e.row_count) + ", dim " +
                      std::to_string(m.dim) + ", layer " + std::to_string(e.layer) + ")");
  }
  for (const auto &[split, path] : m.labels_paths)
    if (!fs::exists(m.resolve(path)))
      throw DataError("manifest references missing label file '" + m.resolve(path).string() + "'");
}

/// Row i of `embeddings` and `labels` describe the same example.
struct DatasetSplit {
  EmbeddingMatrix embeddings;
  LabelVector labels;

  std::size_t size() const noexcept { return labels.n_rows(); }
  std::size_t dim() const noexcept { return embeddings.dim(); }
};

inline DatasetSplit make_split(EmbeddingMatrix embeddings, LabelVector labels) {
  if (embeddings.n_rows() != labels.n_rows())
    throw DataError("row-count mismatch: " + std::to_string(embeddings.n_rows()) +
                    " embedding rows vs " + std::to_string(labels.n_rows()) + " labels");
  return {std::move(embeddings), std::move(labels)};
}

inline DatasetSplit load_dataset(const Manifest &m, std::string_view task, int layer, Split split) {
  if (m.task.name != task)
    throw DataError("manifest describes task '" + m.task.name + "', not '" + std::string(task) + "'");
  const ManifestEntry *e = m.find(split, layer);
  if (!e)
    throw DataError("manifest for task '" + m.task.name + "' has no entry for split " +
                    std::string(to_string(split)) + ", layer " + std::to_string(layer));
  const auto lp = m.labels_paths.find(split);
  if (lp == m.labels_paths.end())
    throw DataError("manifest for task '" + m.task.name + "' has no labels for split " +
                    std::string(to_string(split)));
  const fs::path path = m.resolve(e->embedding_path);
  EmbeddingMatrix emb = read_embeddings(path);
  if (emb.dim() != m.dim)
    throw DataError(path.string() + ": dim " + std::to_string(emb.dim()) + " != manifest dim " +
                    std::to_string(m.dim));
  if (emb.layer != layer)
    throw DataError(path.string() + ": layer " + std::to_string(emb.layer) +
                    " != requested layer " + std::to_string(layer));
  if (emb.n_rows() != e->row_count)
    throw DataError(path.string() + ": " + std::to_string(emb.n_rows()) +
                    " rows != manifest row_count " + std::to_string(e->row_count));
  LabelVector labels = read_labels(m.resolve(lp->second), m.task);
  return make_split(std::move(emb), std::move(labels));
}

/// Builds a manifest from a probing-task text file and a directory of
/// `<split>_layer<L>.prbe` files. Label sidecars (`<split>.labels.tsv`) and
/// the manifest are written next to `manifest_out`. The label map is inferred
/// (sorted distinct labels) when `spec.label_map` is empty; `spec.n_classes`
/// of 0 means "the number of distinct labels".
inline Manifest ingest(const fs::path &senteval, TaskSpec spec, const fs::path &emb_dir,
                       const fs::path &manifest_out, std::vector<std::string> *warnings = nullptr) {
  if (spec.label_map.empty())
    spec.label_map = infer_label_map(senteval);
  if (spec.n_classes == 0)
    spec.n_classes = static_cast<int>(spec.label_map.size());
  spec.validate();

  const SentEvalData data = parse_senteval(senteval, spec);
  if (warnings)
    for (auto &w : balance_warnings(data, spec))
      warnings->push_back(std::move(w));

  Manifest m;
  m.task = spec;
  m.base_dir = manifest_out.parent_path();
  for (const auto &[split, rows] : data) {
    const fs::path labels = std::string(to_string(split)) + ".labels.tsv";
    write_labels(m.resolve(labels), rows, spec);
    m.labels_paths[split] = labels;
  }
  std::vector<fs::path> files;
  for (const auto &entry : fs::directory_iterator(emb_dir))
    if (entry.path().extension() == ".prbe")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto &file : files) {
    const std::string name = file.stem().string();
    const auto us = name.find("_layer");
    if (us == std::string::npos)
      continue;
    const Split split = parse_split(name.substr(0, us));
    int layer = 0;
    try {
      layer = std::stoi(name.substr(us + 6));
    } catch (const std::exception &) {
      throw DataError(file.string() + ": cannot read layer index from file name");
    }
    const PrbeHeader h = read_prbe_header(file);
    const std::size_t rows = data.count(split) ? data.at(split).size() : 0;
    if (h.n_rows != rows)
      throw DataError(file.string() + ": " + std::to_string(h.n_rows) + " rows but the " +
                      std::string(to_string(split)) + " split has " + std::to_string(rows) + " sentences");
    if (m.dim == 0)
      m.dim = h.dim;
    if (h.dim != m.dim)
      throw DataError(file.string() + ": dim " + std::to_string(h.dim) + " != " + std::to_string(m.dim));
    if (h.layer != layer)
      throw DataError(file.string() + ": header layer " + std::to_string(h.layer) +
                      " disagrees with the file name");
    m.entries.push_back({split, layer, fs::relative(fs::absolute(file), fs::absolute(m.base_dir)), h.n_rows});
    if (std::find(m.layers.begin(), m.layers.end(), layer) == m.layers.end())
      m.layers.push_back(layer);
  }
  if (m.entries.empty())
    throw DataError("no <split>_layer<L>.prbe files in '" + emb_dir.string() + "'");
  std::sort(m.layers.begin(), m.layers.end());
  std::sort(m.entries.begin(), m.entries.end(), [](const ManifestEntry &a, const ManifestEntry &b) {
    return std::tie(a.layer, a.split) < std::tie(b.layer, b.split);
  });
  verify_manifest(m);
  write_manifest(m, manifest_out);
  return m;
}

} // namespace mlprobe
