#include "nucleigan/manifest.hpp"

#include <map>
#include <set>

#include "json_io.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/image_io.hpp"

namespace nucleigan {

namespace fs = std::filesystem;

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }
std::string to_string(Source s) { return s == Source::Real ? "real" : "synthetic"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "'");
}

Source source_from_string(const std::string& s) {
  if (s == "real") return Source::Real;
  if (s == "synthetic") return Source::Synthetic;
  throw ValidationError("unknown source '" + s + "'");
}

namespace {

std::string relative_to(const fs::path& p, const fs::path& base) {
  if (base.empty()) return p.generic_string();
  const fs::path abs_base = fs::absolute(base).lexically_normal();
  const fs::path abs_p = fs::absolute(p).lexically_normal();
  const fs::path rel = abs_p.lexically_relative(abs_base);
  return rel.empty() ? abs_p.generic_string() : rel.generic_string();
}

fs::path resolve(const std::string& p, const fs::path& base) {
  const fs::path path(p);
  if (path.is_absolute() || base.empty()) return path;
  return (base / path).lexically_normal();
}

}  // namespace

std::string serialize_manifest(const DatasetManifest& m, const fs::path& base_dir) {
  json records = json::array();
  for (const auto& r : m.records) {
    json j{{"image", relative_to(r.image, base_dir)},
           {"instances", relative_to(r.instances, base_dir)},
           {"organ", r.organ},
           {"patient", r.patient},
           {"split", to_string(r.split)},
           {"source", to_string(r.source)}};
    if (r.seed) j["seed"] = *r.seed;
    records.push_back(std::move(j));
  }
  const json doc{{"config_hash", m.config_hash}, {"created_at", m.created_at}, {"records", records}};
  return doc.dump(2) + "\n";
}

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  DatasetManifest m;
  try {
    const json doc = json::parse(text);
    m.config_hash = doc.value("config_hash", std::string{});
    m.created_at = doc.value("created_at", std::string{});
    for (const auto& j : doc.at("records")) {
      ManifestRecord r;
      r.image = resolve(j.at("image").get<std::string>(), base_dir);
      r.instances = resolve(j.at("instances").get<std::string>(), base_dir);
      r.organ = j.value("organ", std::string{});
      r.patient = j.value("patient", std::string{});
      r.split = split_from_string(j.value("split", std::string("train")));
      r.source = source_from_string(j.value("source", std::string("real")));
      if (j.contains("seed")) r.seed = j.at("seed").get<std::uint64_t>();
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  io::write_file_atomic(path, serialize_manifest(m, path.parent_path()));
}

DatasetManifest load_manifest(const fs::path& path) {
  return parse_manifest(io::read_file(path), path.parent_path());
}

void validate_manifest(const DatasetManifest& m) {
  std::map<std::string, std::set<Split>> splits;
  for (const auto& r : m.records) {
    for (const auto* p : {&r.image, &r.instances})
      if (!fs::exists(*p)) throw ValidationError("manifest references a missing file: " + p->string());
    splits[fs::absolute(r.image).lexically_normal().string()].insert(r.split);
  }
  for (const auto& [image, s] : splits)
    if (s.size() > 1) throw ValidationError("image appears in both train and test splits: " + image);
}

DatasetManifest merge_manifests(const std::vector<DatasetManifest>& parts) {
  DatasetManifest out;
  std::string hashes;
  for (const auto& p : parts) {
    out.records.insert(out.records.end(), p.records.begin(), p.records.end());
    hashes += p.config_hash;
    hashes += ';';
    if (out.created_at.empty()) out.created_at = p.created_at;
  }
  out.config_hash = fnv1a_hex(hashes);
  return out;
}

}  // namespace nucleigan
