#include "nucleigan/checkpoint.hpp"

#include <cstring>
#include <sstream>

#include "json_io.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/image_io.hpp"

namespace nucleigan {

namespace {

struct Parsed {
  json meta;
  std::string blob;
};

Parsed parse(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || bytes.substr(0, nl1) != kCheckpointHeader)
    throw IoError("not a nucleigan checkpoint: " + path.string());
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw IoError("truncated checkpoint: " + path.string());
  Parsed p;
  try {
    p.meta = json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
  }
  p.blob = bytes.substr(nl2 + 1);
  return p;
}

template <class T>
const char* dtype_tag() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& net,
                     const std::string& extra_json) {
  json meta;
  meta["spec"] = to_json(net.spec());
  meta["dtype"] = dtype_tag<T>();
  meta["extra"] = json::parse(extra_json);
  json tensors = json::array();
  std::string blob;
  auto append = [&blob](const T* data, std::size_t count) {
    blob.append(reinterpret_cast<const char*>(data), count * sizeof(T));
  };
  for (auto& p : net.parameters()) {
    const auto& s = p.tensor.shape();
    tensors.push_back({{"name", p.name},
                       {"kind", "param"},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"count", p.tensor.numel()}});
    append(p.tensor.data().data(), p.tensor.numel());
  }
  for (auto& b : net.buffers()) {
    tensors.push_back({{"name", b.name},
                       {"kind", "buffer"},
                       {"shape", {static_cast<int>(b.values->size()), 1, 1, 1}},
                       {"count", b.values->size()}});
    append(b.values->data(), b.values->size());
  }
  meta["tensors"] = tensors;
  std::string out = std::string(kCheckpointHeader) + "\n" + meta.dump() + "\n" + blob;
  io::write_file_atomic(path, out);
}

template <class T>
std::unique_ptr<Network<T>> load_checkpoint(const std::filesystem::path& path,
                                            std::string* extra_json) {
  auto parsed = parse(path);
  const NetworkSpec spec = network_spec_from_json(parsed.meta.at("spec"));
  const std::string dtype = parsed.meta.value("dtype", "f32");
  const std::size_t width = dtype == "f64" ? 8 : 4;
  auto net = build_network<T>(spec, 0);

  std::size_t offset = 0;
  auto read_into = [&](std::span<T> dst, std::size_t count, const std::string& name) {
    if (count != dst.size())
      throw IoError("checkpoint tensor '" + name + "' has " + std::to_string(count) +
                    " entries, network expects " + std::to_string(dst.size()));
    if (offset + count * width > parsed.blob.size())
      throw IoError("checkpoint truncated at tensor '" + name + "'");
    for (std::size_t i = 0; i < count; ++i) {
      const char* src = parsed.blob.data() + offset + i * width;
      if (width == 4) {
        float v;
        std::memcpy(&v, src, 4);
        dst[i] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, src, 8);
        dst[i] = static_cast<T>(v);
      }
    }
    offset += count * width;
  };

  auto params = net->parameters();
  auto buffers = net->buffers();
  for (const auto& entry : parsed.meta.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto count = entry.at("count").get<std::size_t>();
    bool found = false;
    if (entry.at("kind") == "param") {
      for (auto& p : params)
        if (p.name == name) {
          read_into(p.tensor.mutable_data(), count, name);
          found = true;
        }
    } else {
      for (auto& b : buffers)
        if (b.name == name) {
          read_into(std::span<T>(*b.values), count, name);
          found = true;
        }
    }
    if (!found) throw IoError("checkpoint tensor '" + name + "' not present in network");
  }
  if (extra_json) *extra_json = parsed.meta.value("extra", json::object()).dump();
  return net;
}

NetworkSpec read_checkpoint_spec(const std::filesystem::path& path) {
  return network_spec_from_json(parse(path).meta.at("spec"));
}

template void save_checkpoint<float>(const std::filesystem::path&, Network<float>&,
                                     const std::string&);
template void save_checkpoint<double>(const std::filesystem::path&, Network<double>&,
                                      const std::string&);
template std::unique_ptr<Network<float>> load_checkpoint<float>(const std::filesystem::path&,
                                                                std::string*);
template std::unique_ptr<Network<double>> load_checkpoint<double>(const std::filesystem::path&,
                                                                  std::string*);

}  // namespace nucleigan
