// SPDX-License-Identifier: Apache-2.0
#include "mangatone/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mangatone/io.hpp"
#include "mangatone/random.hpp"

namespace mangatone {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const ScreentoneSpec& spec) {
  j = json{{"family", to_string(spec.family)},
           {"period_px", spec.period_px},
           {"angle_deg", spec.angle_deg},
           {"target_intensity", spec.target_intensity},
           {"phase", {spec.phase_x, spec.phase_y}},
           {"inverted", spec.inverted},
           {"seed", spec.seed}};
}

void from_json(const json& j, ScreentoneSpec& spec) {
  spec.family = parse_tone_family(j.at("family").get<std::string>());
  spec.period_px = j.at("period_px").get<double>();
  spec.angle_deg = j.value("angle_deg", 0.0);
  spec.target_intensity = j.value("target_intensity", 0.5);
  if (j.contains("phase")) {
    spec.phase_x = j["phase"].at(0).get<double>();
    spec.phase_y = j["phase"].at(1).get<double>();
  }
  spec.inverted = j.value("inverted", false);
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.validate();
}

void to_json(json& j, const IntensityDirective& d) {
  j = json{{"kind", to_string(d.kind)}, {"from", d.from}, {"to", d.to}, {"angle_deg", d.angle_deg},
           {"center", {d.center_x, d.center_y}}};
}

void from_json(const json& j, IntensityDirective& d) {
  d.kind = parse_directive_kind(j.at("kind").get<std::string>());
  if (d.kind == DirectiveKind::constant && j.contains("value")) {
    d.from = d.to = j["value"].get<double>();
  } else {
    d.from = j.at("from").get<double>();
    d.to = j.value("to", d.from);
  }
  d.angle_deg = j.value("angle_deg", 0.0);
  if (j.contains("center")) {
    d.center_x = j["center"].at(0).get<double>();
    d.center_y = j["center"].at(1).get<double>();
  }
  d.validate();
}

void DatasetConfig::validate() const {
  require(count >= 0, "dataset count must be non-negative");
  require(first_page >= 0, "first_page must be non-negative");
  require(ramp_from >= 0.0 && ramp_from <= 1.0 && ramp_to >= 0.0 && ramp_to <= 1.0, "ramp endpoints must lie in [0, 1]");
  require(height >= 16 && width >= 16, "dataset pages must be at least 16 x 16");
  require(num_specs >= 1, "dataset needs at least one screentone spec");
  require(min_period >= 2.0 && max_period >= min_period, "invalid period range");
  require(ramp_fraction >= 0.0 && ramp_fraction <= 1.0, "ramp fraction must lie in [0, 1]");
  require(min_intensity >= 0.0 && max_intensity <= 1.0 && min_intensity <= max_intensity,
          "invalid intensity range");
  double total = 0.0;
  for (const auto& [family, weight] : family_mix) {
    require(weight >= 0.0, "family weights must be non-negative");
    total += weight;
  }
  require(total > 0.0, "family mix must have positive total weight");
}

json to_json(const DatasetConfig& c) {
  json mix = json::object();
  for (const auto& [family, weight] : c.family_mix) mix[to_string(family)] = weight;
  return json{{"count", c.count},
              {"first_page", c.first_page},
              {"ramp_regions", c.ramp_regions},
              {"ramp_from", c.ramp_from},
              {"ramp_to", c.ramp_to},
              {"height", c.height},
              {"width", c.width},
              {"seed", c.seed},
              {"num_specs", c.num_specs},
              {"include_inverses", c.include_inverses},
              {"family_mix", mix},
              {"min_period", c.min_period},
              {"max_period", c.max_period},
              {"ramp_fraction", c.ramp_fraction},
              {"min_intensity", c.min_intensity},
              {"max_intensity", c.max_intensity},
              {"min_shapes", c.line_art.min_shapes},
              {"max_shapes", c.line_art.max_shapes},
              {"min_stroke", c.line_art.min_stroke},
              {"max_stroke", c.line_art.max_stroke}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  c.count = j.value("count", c.count);
  c.first_page = j.value("first_page", c.first_page);
  c.ramp_regions = j.value("ramp_regions", c.ramp_regions);
  c.ramp_from = j.value("ramp_from", c.ramp_from);
  c.ramp_to = j.value("ramp_to", c.ramp_to);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.seed = j.value("seed", c.seed);
  c.num_specs = j.value("num_specs", c.num_specs);
  c.include_inverses = j.value("include_inverses", c.include_inverses);
  if (j.contains("family_mix")) {
    c.family_mix.clear();
    for (const auto& [name, weight] : j["family_mix"].items())
      c.family_mix[parse_tone_family(name)] = weight.get<double>();
  }
  c.min_period = j.value("min_period", c.min_period);
  c.max_period = j.value("max_period", c.max_period);
  c.ramp_fraction = j.value("ramp_fraction", c.ramp_fraction);
  c.min_intensity = j.value("min_intensity", c.min_intensity);
  c.max_intensity = j.value("max_intensity", c.max_intensity);
  c.line_art.min_shapes = j.value("min_shapes", c.line_art.min_shapes);
  c.line_art.max_shapes = j.value("max_shapes", c.line_art.max_shapes);
  c.line_art.min_stroke = j.value("min_stroke", c.line_art.min_stroke);
  c.line_art.max_stroke = j.value("max_stroke", c.line_art.max_stroke);
  c.validate();
  return c;
}

namespace {

ToneFamily draw_family(const std::map<ToneFamily, double>& mix, Rng& rng) {
  double total = 0.0;
  for (const auto& [f, w] : mix) total += w;
  double r = uniform01(rng) * total;
  for (const auto& [f, w] : mix) {
    if (w <= 0.0) continue;
    if (r < w) return f;
    r -= w;
  }
  for (auto it = mix.rbegin(); it != mix.rend(); ++it)
    if (it->second > 0.0) return it->first;
  return ToneFamily::dot;
}

std::string page_id(int index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

std::vector<ScreentoneSpec> make_spec_bank(const DatasetConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, 0x62616e6b));
  std::vector<ScreentoneSpec> bank;
  for (int i = 0; i < config.num_specs; ++i) {
    ScreentoneSpec s;
    s.family = draw_family(config.family_mix, rng);
    s.period_px = uniform(rng, config.min_period, config.max_period);
    s.angle_deg = uniform(rng, 0.0, 180.0);
    s.phase_x = uniform01(rng);
    s.phase_y = uniform01(rng);
    s.seed = rng();
    s.target_intensity = 0.5;
    bank.push_back(s);
  }
  if (config.include_inverses) {
    const std::size_t base = bank.size();
    for (std::size_t i = 0; i < base; ++i) {
      auto inv = bank[i];
      inv.inverted = true;
      bank.push_back(inv);
    }
  }
  return bank;
}

std::uint64_t page_seed(std::uint64_t master_seed, int index) {
  return derive_seed(master_seed, 0x70616765ULL + static_cast<std::uint64_t>(index));
}

SyntheticPage random_page(const DatasetConfig& config, const std::vector<ScreentoneSpec>& bank,
                          std::uint64_t seed) {
  require(!bank.empty(), "random_page: empty spec bank");
  Rng rng(seed);
  const auto line_art = generate_line_art(config.height, config.width, rng, config.line_art);
  const auto regions = extract_regions(line_art);
  std::vector<bool> forced_ramp(static_cast<std::size_t>(regions.labels.num_labels()), false);
  if (config.ramp_regions >= 0) {
    const auto areas = regions.labels.areas();
    std::vector<int> order(areas.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return areas[a] > areas[b]; });
    for (int i = 0; i < std::min<int>(config.ramp_regions, static_cast<int>(order.size())); ++i)
      forced_ramp[static_cast<std::size_t>(order[i])] = true;
  }
  std::map<int, ToneAssignment> assignment;
  for (int label = 0; label < regions.labels.num_labels(); ++label) {
    ToneAssignment a;
    a.spec = bank[uniform_index(rng, bank.size())];
    if (config.ramp_regions >= 0) {
      if (forced_ramp[static_cast<std::size_t>(label)]) {
        a.directive = IntensityDirective::linear(config.ramp_from, config.ramp_to, uniform(rng, 0.0, 360.0));
        a.spec.target_intensity = 0.5 * (config.ramp_from + config.ramp_to);
      } else {
        const double v = uniform(rng, config.min_intensity, config.max_intensity);
        a.directive = IntensityDirective::constant(v);
        a.spec.target_intensity = v;
      }
    } else if (uniform01(rng) < config.ramp_fraction) {
      const double from = uniform(rng, 0.1, 0.9);
      const double to = uniform(rng, 0.1, 0.9);
      if (uniform01(rng) < 0.5) {
        a.directive = IntensityDirective::linear(from, to, uniform(rng, 0.0, 360.0));
      } else {
        a.directive = IntensityDirective::radial(from, to, uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8));
      }
      a.spec.target_intensity = 0.5 * (from + to);
    } else {
      const double v = uniform(rng, config.min_intensity, config.max_intensity);
      a.directive = IntensityDirective::constant(v);
      a.spec.target_intensity = v;
    }
    assignment.emplace(label, a);
  }
  return compose_page(line_art, assignment, seed);
}

json page_entry(const SyntheticPage& page, const std::string& id, std::uint64_t seed) {
  json regions = json::array();
  for (std::size_t l = 0; l < page.specs.size(); ++l) {
    json r{{"label", l}, {"directive", page.directives[l]}};
    r["spec"] = page.specs[l] ? json(*page.specs[l]) : json(nullptr);
    r["type"] = page.specs[l] ? type_key(*page.specs[l]) : std::string("blank");
    regions.push_back(std::move(r));
  }
  const std::string dir = "pages/" + id + "/";
  return json{{"id", id},
              {"seed", seed},
              {"height", page.image.height()},
              {"width", page.image.width()},
              {"image", dir + "image.png"},
              {"intensity", dir + "intensity.f32"},
              {"labels", dir + "labels.u16"},
              {"linemask", dir + "linemask.png"},
              {"spec", dir + "spec.json"},
              {"num_labels", page.labels.num_labels()},
              {"regions", regions}};
}

void save_page(const SyntheticPage& page, const fs::path& root, const std::string& id, std::uint64_t seed) {
  const auto entry = page_entry(page, id, seed);
  io::save_png(root / entry["image"].get<std::string>(), to_gray(page.image));
  io::save_f32_raw(root / entry["intensity"].get<std::string>(), page.intensity.values());
  io::save_labels_u16(root / entry["labels"].get<std::string>(), page.labels);
  io::save_png(root / entry["linemask"].get<std::string>(), io::mask_to_image(page.line_mask));
  io::write_json(root / entry["spec"].get<std::string>(), entry);
}

std::uint64_t DatasetManifest::hash() const { return fnv1a(document.dump(2) + "\n"); }

DatasetManifest build_dataset(const DatasetConfig& config, const fs::path& out_dir) {
  config.validate();
  const auto bank = make_spec_bank(config);
  json pages = json::array();
  for (int i = 0; i < config.count; ++i) {
    const auto seed = page_seed(config.seed, config.first_page + i);
    const auto page = random_page(config, bank, seed);
    const auto id = page_id(config.first_page + i);
    save_page(page, out_dir, id, seed);
    pages.push_back(page_entry(page, id, seed));
  }
  json bank_json = json::array();
  for (const auto& s : bank) bank_json.push_back(json{{"type", type_key(s)}, {"spec", s}});
  DatasetManifest manifest{out_dir, json{{"format", "mangatone-dataset/1"},
                                         {"config", to_json(config)},
                                         {"spec_bank", bank_json},
                                         {"pages", pages}}};
  io::write_json(out_dir / "manifest.json", manifest.document);
  return manifest;
}

DatasetManifest load_manifest(const fs::path& manifest_path) {
  DatasetManifest m{manifest_path.parent_path(), io::read_json(manifest_path)};
  if (!m.document.contains("pages") || !m.document["pages"].is_array())
    throw IoError(manifest_path.string() + ": manifest has no page list");
  return m;
}

SyntheticPage load_page(const DatasetManifest& manifest, std::size_t index) {
  require(index < manifest.size(), "load_page: index out of range");
  const auto& e = manifest.document["pages"][index];
  const int h = e.at("height").get<int>();
  const int w = e.at("width").get<int>();
  SyntheticPage page;
  page.image = binarize(io::load_png(manifest.root / e.at("image").get<std::string>()));
  page.intensity = IntensityMap(Shape{1, h, w}, io::load_f32_raw(manifest.root / e.at("intensity").get<std::string>(),
                                                                  static_cast<std::size_t>(h) * w));
  const auto labels = io::load_labels_u16(manifest.root / e.at("labels").get<std::string>(), h, w);
  const int num_labels = std::max(labels.num_labels(), e.value("num_labels", 1));
  page.labels = LabelMap(labels.grid(), num_labels);
  page.line_mask = io::image_to_mask(io::load_png(manifest.root / e.at("linemask").get<std::string>()));
  page.specs.assign(static_cast<std::size_t>(num_labels), std::nullopt);
  page.directives.assign(static_cast<std::size_t>(num_labels), IntensityDirective::constant(0.0));
  for (const auto& r : e.at("regions")) {
    const auto l = r.at("label").get<std::size_t>();
    if (l >= page.specs.size()) continue;
    if (!r["spec"].is_null()) page.specs[l] = r["spec"].get<ScreentoneSpec>();
    page.directives[l] = r.at("directive").get<IntensityDirective>();
  }
  return page;
}

}  // namespace mangatone
