// SPDX-License-Identifier: Apache-2.0
#include "mangatone/gateway.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <regex>

#include "mangatone/error.hpp"
#include "mangatone/intensity.hpp"
#include "mangatone/io.hpp"
#include "mangatone/log.hpp"
#include "mangatone/network.hpp"
#include "mangatone/rescreener.hpp"
#include "mangatone/segmenter.hpp"

// After Eigen: OpenSSL and cpp-httplib pull in system headers that define macros Eigen trips over.
#include <openssl/evp.h>
#include <httplib.h>

namespace mangatone {

namespace fs = std::filesystem;
using json = nlohmann::json;

void GatewayConfig::validate() const {
  require(port >= 0 && port <= 65535, "port must be in 0..65535");
  require(!data_dir.empty(), "data_dir must be set");
  require(max_upload_bytes > 0, "max_upload_bytes must be positive");
  require(max_side >= 8, "max_side must be at least 8");
  require(palette_size >= 1, "palette_size must be positive");
  require(threads >= 1, "threads must be positive");
}

json to_json(const GatewayConfig& c) {
  json j{{"host", c.host},
         {"port", c.port},
         {"data_dir", c.data_dir.string()},
         {"max_upload_bytes", c.max_upload_bytes},
         {"max_side", c.max_side},
         {"palette_size", c.palette_size},
         {"palette_seed", c.palette_seed},
         {"threads", c.threads}};
  j["checkpoint"] = c.checkpoint ? json(c.checkpoint->string()) : json(nullptr);
  j["static_dir"] = c.static_dir ? json(c.static_dir->string()) : json(nullptr);
  return j;
}

GatewayConfig gateway_config_from_json(const json& j) {
  GatewayConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.data_dir = j.value("data_dir", c.data_dir.string());
  c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
  c.max_side = j.value("max_side", c.max_side);
  c.palette_size = j.value("palette_size", c.palette_size);
  c.palette_seed = j.value("palette_seed", c.palette_seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("checkpoint") && j["checkpoint"].is_string()) c.checkpoint = j["checkpoint"].get<std::string>();
  if (j.contains("static_dir") && j["static_dir"].is_string()) c.static_dir = j["static_dir"].get<std::string>();
  c.validate();
  return c;
}

void apply_environment(GatewayConfig& c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  auto number = [](const std::string& name, const std::string& v) {
    try {
      std::size_t used = 0;
      const auto n = std::stoll(v, &used);
      if (used == v.size()) return n;
    } catch (const std::exception&) {
    }
    throw ContractViolation(name + " must be an integer, got '" + v + "'");
  };
  if (auto v = env("MANGATONE_HOST")) c.host = *v;
  if (auto v = env("MANGATONE_PORT")) c.port = static_cast<int>(number("MANGATONE_PORT", *v));
  if (auto v = env("MANGATONE_DATA_DIR")) c.data_dir = *v;
  if (auto v = env("MANGATONE_CKPT")) c.checkpoint = *v;
  if (auto v = env("MANGATONE_MAX_UPLOAD_BYTES"))
    c.max_upload_bytes = static_cast<std::size_t>(number("MANGATONE_MAX_UPLOAD_BYTES", *v));
  if (auto v = env("MANGATONE_MAX_SIDE")) c.max_side = static_cast<int>(number("MANGATONE_MAX_SIDE", *v));
  c.validate();
}

std::string to_string(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::bad_input: return "bad_input";
    case ApiErrorCode::not_found: return "not_found";
    case ApiErrorCode::model_unready: return "model_unready";
    case ApiErrorCode::conflict: return "conflict";
    case ApiErrorCode::internal: return "internal";
  }
  return "internal";
}

int http_status(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::bad_input: return 400;
    case ApiErrorCode::not_found: return 404;
    case ApiErrorCode::model_unready: return 503;
    case ApiErrorCode::conflict: return 409;
    case ApiErrorCode::internal: return 500;
  }
  return 500;
}

json ApiError::to_json() const { return {{"code", to_string(code)}, {"message", message}, {"detail", detail}}; }

namespace {

struct ApiException {
  ApiError error;
};

[[noreturn]] void fail(ApiErrorCode code, std::string message, json detail = nullptr) {
  throw ApiException{{code, std::move(message), std::move(detail)}};
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw IoError("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string as_string(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Immutable blobs named by the SHA-256 of their content.
class BlobStore {
 public:
  explicit BlobStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::string put(std::string_view bytes, const std::string& ext) {
    const auto name = sha256_hex(bytes) + "." + ext;
    const auto path = dir_ / name;
    if (!fs::exists(path)) {
      const auto tmp = dir_ / (name + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
      io::write_bytes(tmp, bytes);
      fs::rename(tmp, path);
    }
    return name;
  }

  std::string get(const std::string& name) const {
    static const std::regex valid("[0-9a-f]{64}\\.[a-z0-9]+");
    if (!std::regex_match(name, valid)) throw IoError("invalid blob name '" + name + "'");
    return as_string(io::read_bytes(dir_ / name));
  }

 private:
  fs::path dir_;
};

struct Project {
  std::mutex mutex;
  json record;
  std::unique_ptr<EditSession> session;
};

RegionMask mask_from_png(const std::string& bytes) {
  const auto img = io::decode_png(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  RegionMask mask(img.height(), img.width(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img[i] >= 0.5f ? 1 : 0;
  return mask;
}

std::string mask_to_png(const RegionMask& mask) {
  GrayImage img(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] != 0 ? 1.0f : 0.0f;
  return as_string(io::encode_png(img));
}

std::string labels_to_png(const LabelMap& labels) {
  GrayImage img(labels.height(), labels.width());
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(labels.grid()[i]) / 255.0f;
  return as_string(io::encode_png(img));
}

LabelMap labels_from_png(const std::string& bytes, int num_labels) {
  const auto img = io::decode_png(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  LabelMap::Grid grid(img.height(), img.width(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) grid[i] = static_cast<std::int32_t>(std::lround(img[i] * 255.0f));
  return LabelMap(grid, num_labels);
}

template <class R>
R crop_to(const R& raster, int height, int width) {
  if (raster.height() == height && raster.width() == width) return raster;
  R out(Shape{raster.channels(), height, width});
  for (int c = 0; c < raster.channels(); ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out.plane(c)[static_cast<std::size_t>(y) * width + x] = raster.plane(c)[static_cast<std::size_t>(y) * raster.width() + x];
  return out;
}

std::optional<std::int64_t> parse_version(const std::string& s) {
  std::string v = s;
  v.erase(std::remove(v.begin(), v.end(), '"'), v.end());
  if (v.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto n = std::stoll(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  fail(ApiErrorCode::bad_input, "version must be an integer");
}

}  // namespace

struct Gateway::State {
  explicit State(GatewayConfig c) : config(std::move(c)), blobs(config.data_dir / "blobs") {}

  GatewayConfig config;
  BlobStore blobs;
  httplib::Server server;
  std::shared_ptr<const Model> model;
  std::vector<PaletteEntry> palette;
  std::vector<std::string> palette_png;
  std::mutex registry_mutex;
  std::map<std::string, std::shared_ptr<Project>> projects;
  std::mutex index_mutex;
  int port = -1;
  bool bound = false;

  fs::path project_path(const std::string& id) const { return config.data_dir / "projects" / (id + ".json"); }

  const Model& require_model() const {
    if (!model) fail(ApiErrorCode::model_unready, "no checkpoint is loaded");
    return *model;
  }

  void persist(const json& record) {
    const auto path = project_path(record["id"].get<std::string>());
    const auto tmp = path.string() + ".tmp";
    io::write_json(tmp, record);
    fs::rename(tmp, path);
  }

  void add_to_index(const std::string& id) {
    std::lock_guard lock(index_mutex);
    const auto path = config.data_dir / "index.json";
    json index = fs::exists(path) ? io::read_json(path) : json{{"projects", json::array()}};
    index["projects"].push_back(id);
    io::write_json(path, index);
  }

  std::string new_id() {
    static std::mutex m;
    static std::mt19937_64 gen(std::random_device{}() ^
                               static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    std::lock_guard lock(m);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
    return buf;
  }

  std::shared_ptr<Project> project(const std::string& id) {
    std::lock_guard lock(registry_mutex);
    if (auto it = projects.find(id); it != projects.end()) return it->second;
    const auto path = project_path(id);
    if (!fs::exists(path)) fail(ApiErrorCode::not_found, "no project '" + id + "'");
    auto p = std::make_shared<Project>();
    p->record = io::read_json(path);
    projects[id] = p;
    return p;
  }

  GrayImage source(const json& r) const {
    const auto bytes = blobs.get(r["source"]);
    return io::decode_png(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  }
  LineMask line_mask(const json& r) const {
    const auto bytes = blobs.get(r["line_mask"]);
    return io::image_to_mask(io::decode_png(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size())));
  }
  LatentMap latent(const std::string& name) const { return io::decode_latent_bundle(blobs.get(name)); }
  std::optional<LabelMap> labels(const json& r) const {
    if (r["segmentation"].is_null()) return std::nullopt;
    return labels_from_png(blobs.get(r["segmentation"]["labels"]), r["segmentation"]["k"].get<int>());
  }

  /// Resolver for stored (blob) and client (mask id, label) references.
  MaskResolver resolver(const json& r, const std::optional<LabelMap>& labels) const {
    return [this, &r, &labels](const json& ref) -> RegionMask {
      if (ref.is_object() && ref.contains("blob")) return mask_from_png(blobs.get(ref["blob"]));
      if (ref.is_string()) {
        const auto id = ref.get<std::string>();
        if (!r["masks"].contains(id)) fail(ApiErrorCode::bad_input, "unknown mask '" + id + "'");
        return mask_from_png(blobs.get(r["masks"][id]));
      }
      if (ref.is_object() && (ref.contains("label") || ref.contains("labels"))) {
        if (!labels) fail(ApiErrorCode::bad_input, "label references need a segmentation; POST /segment first");
        return make_mask_resolver({}, &*labels)(ref);
      }
      fail(ApiErrorCode::bad_input, "mask reference must be a mask id or {\"label\": n}");
    };
  }

  json stored_edit(const RegionEdit& e) {
    json j{{"region", {{"blob", blobs.put(mask_to_png(e.region), "png")}}}};
    switch (e.type.kind) {
      case TypeAction::Kind::keep: j["type"] = {{"action", "keep"}}; break;
      case TypeAction::Kind::set_vector: j["type"] = {{"action", "set_vector"}, {"vector", e.type.vector}}; break;
      case TypeAction::Kind::copy_from_region:
        j["type"] = {{"action", "copy_from_region"}, {"donor", {{"blob", blobs.put(mask_to_png(e.type.donor), "png")}}}};
        break;
    }
    static const char* names[] = {"keep", "set_constant", "scale", "offset"};
    j["intensity"] = {{"action", names[static_cast<int>(e.intensity.kind)]}, {"value", e.intensity.value}};
    return j;
  }

  /// Rebuilds the in-memory session by replaying the stored history.
  EditSession& session(Project& p) {
    if (p.session) return *p.session;
    const auto& r = p.record;
    auto s = std::make_unique<EditSession>(require_model(), source(r), line_mask(r), latent(r["latent"]));
    const std::optional<LabelMap> none;
    for (const auto& h : r["history"]) s->apply(region_edit_from_json(h["stored"], resolver(r, none)));
    p.session = std::move(s);
    return *p.session;
  }

  /// Stores preview and current latent of the session into the record.
  void snapshot(Project& p, EditSession& s) {
    p.record["preview"] = blobs.put(as_string(io::encode_png(s.preview())), "png");
    p.record["current_latent"] = blobs.put(io::encode_latent_bundle(s.latent()), "mlat");
    p.record["updated"] = utc_now();
  }

  void check_version(const Project& p, std::optional<std::int64_t> expected) {
    const auto current = p.record["version"].get<std::int64_t>();
    if (expected && *expected != current)
      fail(ApiErrorCode::conflict, "project changed: expected version " + std::to_string(*expected) + ", now " + std::to_string(current),
           {{"version", current}});
  }

  json descriptor(const json& r) const {
    const auto id = r["id"].get<std::string>();
    json history = json::array();
    for (const auto& h : r["history"]) history.push_back(h["edit"]);
    return {{"id", id},
            {"version", r["version"]},
            {"created", r["created"]},
            {"updated", r["updated"]},
            {"width", r["width"]},
            {"height", r["height"]},
            {"latent_shape", {4, r["height"], r["width"]}},
            {"history_length", r["history"].size()},
            {"history", history},
            {"segmentation", r["segmentation"]},
            {"preview_url", "/projects/" + id + "/preview"},
            {"latent_url", "/projects/" + id + "/latent"}};
  }
};

namespace {

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const ApiError& e) {
  send_json(res, {{"error", e.to_json()}}, http_status(e.code));
}

Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const ApiException& e) {
      send_error(res, e.error);
    } catch (const ContractViolation& e) {
      send_error(res, {ApiErrorCode::bad_input, e.what()});
    } catch (const json::exception& e) {
      send_error(res, {ApiErrorCode::bad_input, std::string("malformed JSON: ") + e.what()});
    } catch (const std::exception& e) {
      log::error(std::string("request ") + req.method + " " + req.path + " failed: " + e.what());
      send_error(res, {ApiErrorCode::internal, e.what()});
    }
  };
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ApiErrorCode::bad_input, "request body must be a JSON object");
  return j;
}

std::optional<std::int64_t> expected_version(const httplib::Request& req, const json& body) {
  if (body.contains("version")) {
    if (!body["version"].is_number_integer()) fail(ApiErrorCode::bad_input, "version must be an integer");
    return body["version"].get<std::int64_t>();
  }
  if (req.has_param("version")) return parse_version(req.get_param_value("version"));
  if (req.has_header("If-Match")) return parse_version(req.get_header_value("If-Match"));
  return std::nullopt;
}

GrayImage decode_upload(const std::string& body, const GatewayConfig& config) {
  if (body.empty()) fail(ApiErrorCode::bad_input, "empty body; expected a PNG");
  if (body.size() > config.max_upload_bytes) fail(ApiErrorCode::bad_input, "upload exceeds the size cap");
  GrayImage img;
  try {
    img = io::decode_png(std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  } catch (const IoError& e) {
    fail(ApiErrorCode::bad_input, std::string("not a readable PNG: ") + e.what());
  }
  if (img.height() > config.max_side || img.width() > config.max_side)
    fail(ApiErrorCode::bad_input, "image exceeds the maximum side of " + std::to_string(config.max_side),
         {{"height", img.height()}, {"width", img.width()}});
  return img;
}

}  // namespace

Gateway::Gateway(GatewayConfig config) : state_(std::make_unique<State>(std::move(config))) {
  auto& st = *state_;
  st.config.validate();
  fs::create_directories(st.config.data_dir / "projects");
  if (st.config.checkpoint) {
    st.model = std::make_shared<const Model>(load_model(*st.config.checkpoint));
    Rng rng(st.config.palette_seed);
    st.palette = sample_type_palette(*st.model, st.config.palette_size, rng);
    for (const auto& entry : st.palette) {
      LatentMap swatch{IntensityMap(kPaletteSwatch, kPaletteSwatch, 0.5f), make_type_feature(kPaletteSwatch, kPaletteSwatch)};
      for (int c = 0; c < 3; ++c)
        for (auto& v : swatch.type_feature.plane(c)) v = static_cast<float>(entry.type[c]);
      st.palette_png.push_back(as_string(io::encode_png(st.model->decode(swatch))));
    }
    log::info("gateway: loaded " + st.config.checkpoint->string());
  } else {
    log::warn("gateway: no checkpoint; model routes answer model_unready");
  }

  auto& svr = st.server;
  const int threads = st.config.threads;
  svr.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  svr.set_payload_max_length(st.config.max_upload_bytes + 1024);
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto code = res.status == 404 ? ApiErrorCode::not_found
                      : res.status == 413 || res.status == 400 ? ApiErrorCode::bad_input
                                                               : ApiErrorCode::internal;
    const int status = res.status;
    send_error(res, {code, httplib::status_message(status)});
    res.status = status;
  });
  if (st.config.static_dir && fs::is_directory(*st.config.static_dir))
    svr.set_mount_point("/app", st.config.static_dir->string());

  const std::string id_re = "([0-9a-f]{16})";

  svr.Get("/healthz", guarded([&st](const httplib::Request&, httplib::Response& res) {
            send_json(res, {{"status", "ok"}, {"model_ready", static_cast<bool>(st.model)}});
          }));

  svr.Get("/palette", guarded([&st](const httplib::Request&, httplib::Response& res) {
            st.require_model();
            json entries = json::array();
            for (std::size_t i = 0; i < st.palette.size(); ++i) {
              auto e = to_json(st.palette[i]);
              e["index"] = i;
              e["label"] = to_string(st.palette[i].spec.family) + " " +
                           std::to_string(static_cast<int>(std::lround(st.palette[i].spec.period_px))) + "px" +
                           (st.palette[i].spec.inverted ? " inverted" : "");
              e["thumbnail_url"] = "/palette/" + std::to_string(i) + ".png";
              entries.push_back(e);
            }
            send_json(res, {{"entries", entries}});
          }));

  svr.Get(R"(/palette/(\d+)\.png)", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            st.require_model();
            const auto i = std::stoul(req.matches[1].str());
            if (i >= st.palette_png.size()) fail(ApiErrorCode::not_found, "no palette entry " + std::to_string(i));
            res.set_content(st.palette_png[i], "image/png");
          }));

  svr.Get("/projects", guarded([&st](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(st.index_mutex);
            const auto path = st.config.data_dir / "index.json";
            send_json(res, fs::exists(path) ? io::read_json(path) : json{{"projects", json::array()}});
          }));

  svr.Post("/projects", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const auto upload = decode_upload(req.body, st.config);
             const auto& model = st.require_model();
             const auto bitonal = binarize(upload);
             const auto page = to_gray(bitonal);
             const auto lines = fallback_line_mask(bitonal);
             auto p = std::make_shared<Project>();
             auto session = std::make_unique<EditSession>(model, page, lines);
             const auto id = st.new_id();
             const auto now = utc_now();
             p->record = {{"id", id},
                          {"version", 1},
                          {"created", now},
                          {"updated", now},
                          {"width", page.width()},
                          {"height", page.height()},
                          {"source", st.blobs.put(as_string(io::encode_png(page)), "png")},
                          {"line_mask", st.blobs.put(as_string(io::encode_png(io::mask_to_image(lines))), "png")},
                          {"latent", st.blobs.put(io::encode_latent_bundle(session->original_latent()), "mlat")},
                          {"segmentation", nullptr},
                          {"masks", json::object()},
                          {"history", json::array()}};
             // Sessions always start from the stored latent so replays match.
             session = std::make_unique<EditSession>(model, page, lines, session->original_latent());
             st.snapshot(*p, *session);
             p->session = std::move(session);
             st.persist(p->record);
             st.add_to_index(id);
             {
               std::lock_guard lock(st.registry_mutex);
               st.projects[id] = p;
             }
             send_json(res, st.descriptor(p->record), 201);
           }));

  svr.Get("/projects/" + id_re, guarded([&st](const httplib::Request& req, httplib::Response& res) {
            auto p = st.project(req.matches[1]);
            std::lock_guard lock(p->mutex);
            send_json(res, st.descriptor(p->record));
          }));

  svr.Post("/projects/" + id_re + "/segment", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const auto body = body_json(req);
             SegmentOptions opts;
             opts.k_min = body.value("k_min", 1);
             opts.k_max = body.value("k_max", 10);
             const auto seed = body.value("seed", std::uint64_t{0});
             if (opts.k_min < 1 || opts.k_max > 10 || opts.k_min > opts.k_max)
               fail(ApiErrorCode::bad_input, "k range must satisfy 1 <= k_min <= k_max <= 10",
                    {{"k_min", opts.k_min}, {"k_max", opts.k_max}});
             auto p = st.project(req.matches[1]);
             std::lock_guard lock(p->mutex);
             st.check_version(*p, expected_version(req, body));
             auto& r = p->record;
             const auto base = st.latent(r["latent"]);
             const auto lines = st.line_mask(r);
             Rng rng(seed);
             const auto seg = segment_page(base, lines, rng, opts);
             json regions = json::array();
             for (int l = 0; l < seg.k; ++l) {
               std::size_t area = 0;
               double intensity = 0.0;
               for (std::size_t i = 0; i < lines.size(); ++i) {
                 if (seg.labels.grid()[i] != l) continue;
                 ++area;
                 intensity += base.intensity[i];
               }
               regions.push_back({{"label", l}, {"area", area}, {"mean_intensity", area ? intensity / static_cast<double>(area) : 0.0}});
             }
             const auto id = r["id"].get<std::string>();
             r["segmentation"] = {{"k", seg.k},
                                  {"silhouette", seg.silhouette ? json(*seg.silhouette) : json(nullptr)},
                                  {"seed", seed},
                                  {"k_min", opts.k_min},
                                  {"k_max", opts.k_max},
                                  {"regions", regions},
                                  {"labels", st.blobs.put(labels_to_png(seg.labels), "png")},
                                  {"labels_url", "/projects/" + id + "/labels.png"}};
             r["version"] = r["version"].get<std::int64_t>() + 1;
             r["updated"] = utc_now();
             st.persist(r);
             auto summary = r["segmentation"];
             summary.erase("labels");
             summary["version"] = r["version"];
             send_json(res, summary);
           }));

  svr.Get("/projects/" + id_re + "/labels.png", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            auto p = st.project(req.matches[1]);
            std::lock_guard lock(p->mutex);
            if (p->record["segmentation"].is_null()) fail(ApiErrorCode::not_found, "project is not segmented");
            res.set_content(st.blobs.get(p->record["segmentation"]["labels"]), "image/png");
          }));

  svr.Get("/projects/" + id_re + R"(/layers/(\w+)\.png)",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            auto p = st.project(req.matches[1]);
            std::lock_guard lock(p->mutex);
            const auto& r = p->record;
            const auto layer = req.matches[2].str();
            if (layer == "original") return res.set_content(st.blobs.get(r["source"]), "image/png");
            if (layer == "preview") return res.set_content(st.blobs.get(r["preview"]), "image/png");
            const auto current = st.latent(r["current_latent"]);
            if (layer == "intensity") {
              GrayImage img(current.intensity.height(), current.intensity.width());
              for (std::size_t i = 0; i < img.size(); ++i) img[i] = 1.0f - current.intensity[i];
              return res.set_content(as_string(io::encode_png(img)), "image/png");
            }
            if (layer == "type_pca")
              return res.set_content(as_string(io::encode_png_rgb(pca_visualize(current.type_feature, st.line_mask(r)))),
                                     "image/png");
            if (layer == "segmentation") {
              const auto labels = st.labels(r);
              if (!labels) fail(ApiErrorCode::not_found, "project is not segmented");
              return res.set_content(as_string(io::encode_png_rgb(render_segmentation(*labels, st.line_mask(r)))), "image/png");
            }
            fail(ApiErrorCode::not_found, "unknown layer '" + layer + "'");
          }));

  svr.Post("/projects/" + id_re + "/masks", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             auto p = st.project(req.matches[1]);
             const auto img = decode_upload(req.body, st.config);
             std::lock_guard lock(p->mutex);
             auto& r = p->record;
             if (img.height() != r["height"].get<int>() || img.width() != r["width"].get<int>())
               fail(ApiErrorCode::bad_input, "mask size differs from the page");
             RegionMask mask(img.height(), img.width(), 0);
             for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img[i] >= 0.5f ? 1 : 0;
             const auto blob = st.blobs.put(mask_to_png(mask), "png");
             const auto mask_id = "m" + blob.substr(0, 16);
             r["masks"][mask_id] = blob;
             st.persist(r);
             send_json(res, {{"mask", mask_id}}, 201);
           }));

  svr.Post("/projects/" + id_re + "/edits", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const auto body = body_json(req);
             const json& edit_json = body.contains("edit") ? body["edit"] : body;
             auto p = st.project(req.matches[1]);
             std::lock_guard lock(p->mutex);
             st.check_version(*p, expected_version(req, body));
             auto& r = p->record;
             const auto labels = st.labels(r);
             json client_edit = edit_json;
             client_edit.erase("version");
             const auto edit = region_edit_from_json(client_edit, st.resolver(r, labels));
             auto& session = st.session(*p);
             session.apply(edit);
             st.snapshot(*p, session);
             r["history"].push_back({{"edit", client_edit}, {"stored", st.stored_edit(edit)}});
             r["version"] = r["version"].get<std::int64_t>() + 1;
             st.persist(r);

             const auto& model = *st.model;
             const auto& preview = session.preview();
             const auto reencoded = model.encode(pad_to_multiple(preview, model.config().input_multiple())).latent;
             const LatentMap cropped{crop_to(reencoded.intensity, preview.height(), preview.width()),
                                     crop_to(reencoded.type_feature, preview.height(), preview.width())};
             const auto stats = region_stats(cropped, edit.region);
             const auto id = r["id"].get<std::string>();
             send_json(res,
                       {{"version", r["version"]},
                        {"history_length", r["history"].size()},
                        {"preview_url", "/projects/" + id + "/preview?version=" + std::to_string(r["version"].get<std::int64_t>())},
                        {"region_stats", to_json(stats)}},
                       201);
           }));

  svr.Delete("/projects/" + id_re + "/edits/last", guarded([&st](const httplib::Request& req, httplib::Response& res) {
               auto p = st.project(req.matches[1]);
               std::lock_guard lock(p->mutex);
               st.check_version(*p, expected_version(req, json::object()));
               auto& r = p->record;
               if (r["history"].empty()) fail(ApiErrorCode::conflict, "history is empty; nothing to undo");
               auto& session = st.session(*p);
               session.undo();
               r["history"].erase(r["history"].size() - 1);
               st.snapshot(*p, session);
               r["version"] = r["version"].get<std::int64_t>() + 1;
               st.persist(r);
               send_json(res, {{"version", r["version"]}, {"history_length", r["history"].size()}});
             }));

  svr.Get("/projects/" + id_re + "/preview", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            auto p = st.project(req.matches[1]);
            std::lock_guard lock(p->mutex);
            res.set_header("X-Project-Version", std::to_string(p->record["version"].get<std::int64_t>()));
            res.set_content(st.blobs.get(p->record["preview"]), "image/png");
          }));

  svr.Get("/projects/" + id_re + "/latent", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            auto p = st.project(req.matches[1]);
            std::lock_guard lock(p->mutex);
            res.set_header("X-Project-Version", std::to_string(p->record["version"].get<std::int64_t>()));
            res.set_content(st.blobs.get(p->record["current_latent"]), "application/octet-stream");
          }));

  svr.Put("/projects/" + id_re + "/latent", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            LatentMap latent;
            try {
              latent = io::decode_latent_bundle(req.body);
              latent.validate();
            } catch (const Error& e) {
              fail(ApiErrorCode::bad_input, std::string("not a latent bundle: ") + e.what());
            }
            auto p = st.project(req.matches[1]);
            std::lock_guard lock(p->mutex);
            st.check_version(*p, expected_version(req, json::object()));
            auto& r = p->record;
            if (latent.intensity.height() != r["height"].get<int>() || latent.intensity.width() != r["width"].get<int>())
              fail(ApiErrorCode::bad_input, "latent size differs from the page");
            auto session = std::make_unique<EditSession>(st.require_model(), st.source(r), st.line_mask(r), latent);
            r["latent"] = st.blobs.put(io::encode_latent_bundle(latent), "mlat");
            r["history"] = json::array();
            r["segmentation"] = nullptr;
            st.snapshot(*p, *session);
            p->session = std::move(session);
            r["version"] = r["version"].get<std::int64_t>() + 1;
            st.persist(r);
            send_json(res, st.descriptor(r));
          }));
}

Gateway::~Gateway() { stop(); }

int Gateway::bind() {
  auto& st = *state_;
  if (st.bound) return st.port;
  st.port = st.config.port == 0 ? st.server.bind_to_any_port(st.config.host)
                                : (st.server.bind_to_port(st.config.host, st.config.port) ? st.config.port : -1);
  if (st.port < 0) throw IoError("cannot bind " + st.config.host + ":" + std::to_string(st.config.port));
  st.bound = true;
  return st.port;
}

void Gateway::listen() {
  bind();
  log::info("gateway: listening on " + state_->config.host + ":" + std::to_string(state_->port));
  state_->server.listen_after_bind();
}

void Gateway::stop() {
  if (state_ && state_->server.is_running()) state_->server.stop();
}

void Gateway::wait_until_ready() const { state_->server.wait_until_ready(); }

bool Gateway::model_ready() const { return static_cast<bool>(state_->model); }

const GatewayConfig& Gateway::config() const { return state_->config; }

}  // namespace mangatone
