#include "rgbt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "rgbt/errors.hpp"

namespace fs = std::filesystem;

namespace rgbt {

FramePair RgbtSequence::frame(int i) const {
  if (i < 0 || i >= size()) {
    throw std::out_of_range(name + ": frame " + std::to_string(i) +
                            " outside [0, " + std::to_string(size()) + ")");
  }
  FramePair f;
  if (!frames_.empty()) {
    f = frames_[i];
  } else {
    f.rgb = to_three_channels(read_image(rgb_files_[i]));
    f.thermal = to_three_channels(read_image(t_files_[i]));
  }
  f.gt = gt[i];
  return f;
}

void RgbtSequence::set_frames(std::vector<FramePair> frames) {
  frames_ = std::move(frames);
  rgb_files_.clear();
  t_files_.clear();
}

void RgbtSequence::set_files(std::vector<std::string> rgb,
                             std::vector<std::string> thermal) {
  rgb_files_ = std::move(rgb);
  t_files_ = std::move(thermal);
  frames_.clear();
}

Layout parse_layout(const std::string& s) {
  if (s == "rgbt234") return Layout::rgbt234;
  if (s == "gtot") return Layout::gtot;
  throw std::invalid_argument("unknown layout '" + s + "'");
}

std::vector<BoundingBox> read_boxes(const std::string& path, bool corners) {
  std::ifstream in(path);
  if (!in) throw LoadError(path + ": cannot open");
  std::vector<BoundingBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& c : line) {
      if (c == ',' || c == '\t' || c == '\r' || c == ';') c = ' ';
    }
    std::istringstream ss(line);
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    std::string rest;
    ss.clear();
    if (ss >> rest) {
      throw LoadError(path + ":" + std::to_string(lineno) + ": bad token '" +
                      rest + "'");
    }
    if (v.empty()) {
      // tolerate trailing blank lines only
      std::string tail;
      while (std::getline(in, tail)) {
        ++lineno;
        if (tail.find_first_not_of(" \t\r") != std::string::npos) {
          throw LoadError(path + ":" + std::to_string(lineno - 1) +
                          ": missing ground-truth line");
        }
      }
      break;
    }
    if (v.size() < 4) {
      throw LoadError(path + ":" + std::to_string(lineno) + ": expected 4 values");
    }
    if (corners) out.push_back({v[0], v[1], v[2] - v[0], v[3] - v[1]});
    else out.push_back({v[0], v[1], v[2], v[3]});
  }
  return out;
}

void write_boxes(const std::string& path,
                 const std::vector<BoundingBox>& boxes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw LoadError(tmp + ": cannot open for writing");
    auto num = [](double v) {
      char buf[32];
      return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
    };
    for (const auto& b : boxes) {
      out << num(b.x) << ',' << num(b.y) << ',' << num(b.w) << ',' << num(b.h)
          << '\n';
    }
    if (!out) throw LoadError(tmp + ": write failed");
  }
  fs::rename(tmp, path);
}

namespace {

bool is_image(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), ::tolower);
  return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".bmp";
}

std::vector<std::string> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError(dir.string() + ": missing folder");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::set<std::string> read_attributes(const fs::path& dir) {
  std::set<std::string> tags;
  const auto& vocab = attribute_vocabulary();
  const fs::path list = dir / "attributes.txt";
  if (fs::exists(list)) {
    std::ifstream in(list);
    std::string tok;
    while (in >> tok) {
      for (auto& c : tok) if (c == ',') c = ' ';
      std::istringstream ss(tok);
      std::string t;
      while (ss >> t) {
        std::transform(t.begin(), t.end(), t.begin(), ::toupper);
        if (std::find(vocab.begin(), vocab.end(), t) == vocab.end()) {
          throw LoadError(list.string() + ": unknown tag '" + t + "'");
        }
        tags.insert(t);
      }
    }
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".tag") continue;
    std::string t = e.path().stem().string();
    std::transform(t.begin(), t.end(), t.begin(), ::toupper);
    if (std::find(vocab.begin(), vocab.end(), t) == vocab.end()) continue;
    std::ifstream in(e.path());
    double v;
    while (in >> v) {
      if (v != 0) {
        tags.insert(t);
        break;
      }
    }
  }
  return tags;
}

}  // namespace

RgbtSequence load_sequence(const std::string& dir, Layout layout,
                           bool use_thermal_gt) {
  const fs::path root(dir);
  RgbtSequence seq;
  seq.name = root.filename().string();
  if (seq.name.empty()) seq.name = root.parent_path().filename().string();
  fs::path vdir, tdir, vgt, tgt;
  bool corners = false;
  if (layout == Layout::rgbt234) {
    vdir = root / "visible";
    tdir = root / "infrared";
    vgt = root / "visible.txt";
    tgt = root / "infrared.txt";
  } else {
    vdir = root / "v";
    tdir = root / "i";
    vgt = root / "groundTruth_v.txt";
    tgt = root / "groundTruth_i.txt";
    corners = true;
  }
  auto rgb = list_images(vdir);
  auto th = list_images(tdir);
  if (rgb.size() != th.size()) {
    throw LoadError(seq.name + ": " + std::to_string(rgb.size()) +
                    " visible frames but " + std::to_string(th.size()) +
                    " thermal frames");
  }
  const fs::path gt_path = use_thermal_gt ? tgt : vgt;
  seq.gt = read_boxes(gt_path.string(), corners);
  if (seq.gt.size() != rgb.size()) {
    throw LoadError(seq.name + ": " + std::to_string(rgb.size()) +
                    " frames but " + std::to_string(seq.gt.size()) +
                    " ground-truth lines in " + gt_path.filename().string());
  }
  seq.attributes = read_attributes(root);
  seq.set_files(std::move(rgb), std::move(th));
  return seq;
}

std::vector<RgbtSequence> load_dataset(const std::string& root, Layout layout) {
  if (!fs::is_directory(root)) throw LoadError(root + ": not a directory");
  std::vector<std::string> dirs;
  const char* marker = layout == Layout::rgbt234 ? "visible" : "v";
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::is_directory(e.path() / marker)) {
      dirs.push_back(e.path().string());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RgbtSequence> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d, layout));
  return out;
}

void save_sequence(const RgbtSequence& seq, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "visible");
  fs::create_directories(root / "infrared");
  for (int i = 0; i < seq.size(); ++i) {
    const FramePair f = seq.frame(i);
    std::ostringstream name;
    name << std::setw(5) << std::setfill('0') << (i + 1) << ".png";
    write_image((root / "visible" / name.str()).string(), f.rgb);
    write_image((root / "infrared" / name.str()).string(), f.thermal);
  }
  write_boxes((root / "visible.txt").string(), seq.gt);
  write_boxes((root / "infrared.txt").string(), seq.gt);
  std::ofstream tags(root / "attributes.txt");
  bool first = true;
  for (const auto& t : seq.attributes) {
    tags << (first ? "" : ",") << t;
    first = false;
  }
  tags << '\n';
}

// ---------------------------------------------------------------- synthetic

namespace {

struct Canvas {
  int w = 0, h = 0;
  std::vector<float> rgb;  // w*h*3
  std::vector<float> t;    // w*h
};

Canvas make_background(int w, int h, std::mt19937_64& rng) {
  Canvas c{w, h, std::vector<float>(static_cast<std::size_t>(w) * h * 3),
           std::vector<float>(static_cast<std::size_t>(w) * h)};
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> nd(0, 1);
  for (std::size_t i = 0; i < c.t.size(); ++i) {
    for (int k = 0; k < 3; ++k) c.rgb[i * 3 + k] = static_cast<float>(90 + 12 * nd(rng));
    c.t[i] = static_cast<float>(70 + 3 * nd(rng));
  }
  // random rectangles give structure at several scales
  const int count = w * h / 250;
  for (int r = 0; r < count; ++r) {
    const int rw = 3 + static_cast<int>(u(rng) * 20);
    const int rh = 3 + static_cast<int>(u(rng) * 20);
    const int x0 = static_cast<int>(u(rng) * (w - rw));
    const int y0 = static_cast<int>(u(rng) * (h - rh));
    float col[3];
    for (float& v : col) v = static_cast<float>(30 + u(rng) * 170);
    const float tv = static_cast<float>(45 + u(rng) * 55);
    for (int y = y0; y < y0 + rh; ++y) {
      for (int x = x0; x < x0 + rw; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        for (int k = 0; k < 3; ++k) c.rgb[i * 3 + k] = 0.3f * c.rgb[i * 3 + k] + 0.7f * col[k];
        c.t[i] = 0.5f * c.t[i] + 0.5f * tv;
      }
    }
  }
  return c;
}

struct TargetTemplate {
  static constexpr int kSize = 32;
  std::vector<float> rgb = std::vector<float>(kSize * kSize * 3);
  std::vector<float> t = std::vector<float>(kSize * kSize);
};

TargetTemplate make_target(std::mt19937_64& rng) {
  TargetTemplate tt;
  std::uniform_real_distribution<double> u(0, 1);
  float a[3], b[3];
  for (int k = 0; k < 3; ++k) {
    a[k] = static_cast<float>(150 + u(rng) * 100);
    b[k] = static_cast<float>(u(rng) * 80);
  }
  const int period = 4 + static_cast<int>(u(rng) * 5);
  const bool diag = u(rng) < 0.5;
  const int n = TargetTemplate::kSize;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int phase = diag ? (x + y) / period : (x / period + y / period);
      const float* col = phase % 2 ? a : b;
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      for (int k = 0; k < 3; ++k) tt.rgb[i * 3 + k] = col[k];
      const double dx = (x - n / 2.0) / (n / 2.0), dy = (y - n / 2.0) / (n / 2.0);
      tt.t[i] = static_cast<float>(230 - 40 * (dx * dx + dy * dy));
    }
  }
  return tt;
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

struct Trajectory {
  std::vector<BoundingBox> world;  // target in world coordinates
  std::vector<double> cam_x, cam_y;
};

Trajectory trajectory(const SynthSpec& s) {
  Trajectory tr;
  double cx = 0, cy = 0;
  for (int f = 0; f < s.length; ++f) {
    for (const auto& e : s.camera_events) {
      if (e.frame == f) {
        cx += e.dx;
        cy += e.dy;
      }
    }
    tr.cam_x.push_back(cx);
    tr.cam_y.push_back(cy);
    const double sc = std::pow(1.0 + s.scale_rate, f);
    const double w = s.start.w * sc, h = s.start.h * sc;
    tr.world.push_back(BoundingBox::from_center(s.start.cx() + s.vx * f,
                                                s.start.cy() + s.vy * f, w, h));
  }
  return tr;
}

}  // namespace

void validate(const SynthSpec& s) {
  if (s.length <= 0 || s.width <= 0 || s.height <= 0) {
    throw ConfigError(s.name + ": length and frame size must be > 0");
  }
  if (!s.start.valid()) throw ConfigError(s.name + ": invalid start box");
  for (const auto& e : s.camera_events) {
    if (e.frame < 0 || e.frame >= s.length) {
      throw ConfigError(s.name + ": camera event at frame " +
                        std::to_string(e.frame) + " outside the sequence");
    }
  }
  for (const auto* list : {&s.low_light, &s.crossover}) {
    for (const auto& iv : *list) {
      if (iv.begin < 0 || iv.end > s.length || iv.begin >= iv.end) {
        throw ConfigError(s.name + ": interval [" + std::to_string(iv.begin) +
                          ", " + std::to_string(iv.end) + ") outside the sequence");
      }
    }
  }
  if (s.low_light_gain < 0) throw ConfigError(s.name + ": negative gain");
  const Trajectory tr = trajectory(s);
  for (int f = 0; f < s.length; ++f) {
    BoundingBox b = tr.world[f];
    b.x -= tr.cam_x[f];
    b.y -= tr.cam_y[f];
    if (b.x < 0 || b.y < 0 || b.x + b.w > s.width || b.y + b.h > s.height) {
      throw ConfigError(s.name + ": target leaves the frame at frame " +
                        std::to_string(f));
    }
  }
}

RgbtSequence synth_generate(const SynthSpec& s) {
  validate(s);
  const Trajectory tr = trajectory(s);
  std::mt19937_64 rng(s.seed);
  const auto [mnx, mxx] = std::minmax_element(tr.cam_x.begin(), tr.cam_x.end());
  const auto [mny, mxy] = std::minmax_element(tr.cam_y.begin(), tr.cam_y.end());
  const int ox = static_cast<int>(std::ceil(-*mnx)) + 1;
  const int oy = static_cast<int>(std::ceil(-*mny)) + 1;
  const int cw = s.width + ox + static_cast<int>(std::ceil(*mxx)) + 2;
  const int ch = s.height + oy + static_cast<int>(std::ceil(*mxy)) + 2;
  const Canvas bg = make_background(cw, ch, rng);
  const TargetTemplate tt = make_target(rng);
  std::normal_distribution<double> nd(0, 1);

  RgbtSequence seq;
  seq.name = s.name;
  std::vector<FramePair> frames;
  for (int f = 0; f < s.length; ++f) {
    const double camx = tr.cam_x[f], camy = tr.cam_y[f];
    BoundingBox gt = tr.world[f];
    gt.x -= camx;
    gt.y -= camy;
    const bool dark = std::any_of(s.low_light.begin(), s.low_light.end(),
                                  [&](const Interval& iv) { return iv.contains(f); });
    const bool cross = std::any_of(s.crossover.begin(), s.crossover.end(),
                                   [&](const Interval& iv) { return iv.contains(f); });
    FramePair fp;
    fp.rgb = Image(s.width, s.height, 3);
    fp.thermal = Image(s.width, s.height, 3);
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        // integer part of the camera offset selects the canvas pixel
        const int wx = std::clamp(x + ox + static_cast<int>(std::lround(camx)), 0, cw - 1);
        const int wy = std::clamp(y + oy + static_cast<int>(std::lround(camy)), 0, ch - 1);
        const std::size_t wi = static_cast<std::size_t>(wy) * cw + wx;
        double rgb[3] = {bg.rgb[wi * 3], bg.rgb[wi * 3 + 1], bg.rgb[wi * 3 + 2]};
        double t = bg.t[wi];
        const double u = (x + 0.5 - gt.x) / gt.w;
        const double v = (y + 0.5 - gt.y) / gt.h;
        if (u >= 0 && u < 1 && v >= 0 && v < 1) {
          const int tx = std::min(TargetTemplate::kSize - 1, static_cast<int>(u * TargetTemplate::kSize));
          const int ty = std::min(TargetTemplate::kSize - 1, static_cast<int>(v * TargetTemplate::kSize));
          const std::size_t ti = static_cast<std::size_t>(ty) * TargetTemplate::kSize + tx;
          for (int k = 0; k < 3; ++k) rgb[k] = tt.rgb[ti * 3 + k];
          t = cross ? bg.t[wi] + 0.05 * (tt.t[ti] - 210) : tt.t[ti];
        }
        if (dark) {
          for (double& c : rgb) c = c * s.low_light_gain + s.low_light_noise * nd(rng);
        }
        for (int k = 0; k < 3; ++k) fp.rgb.at(x, y, k) = to_u8(rgb[k]);
        const auto tv = to_u8(t);
        for (int k = 0; k < 3; ++k) fp.thermal.at(x, y, k) = tv;
      }
    }
    fp.gt = gt;
    seq.gt.push_back(gt);
    frames.push_back(std::move(fp));
  }
  seq.set_frames(std::move(frames));
  seq.attributes.insert("NO");
  if (!s.camera_events.empty()) seq.attributes.insert("CM");
  if (!s.low_light.empty()) seq.attributes.insert("LI");
  if (!s.crossover.empty()) seq.attributes.insert("TC");
  if (s.scale_rate != 0) seq.attributes.insert("SV");
  return seq;
}

std::vector<SynthSpec> benchmark_specs(int count, std::uint64_t seed,
                                       int length) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<SynthSpec> out;
  const int half = count / 2;
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0;; ++attempt) {
      SynthSpec s;
      s.length = length;
      s.width = 192;
      s.height = 144;
      s.seed = rng();
      const double w = 20 + u(rng) * 10, h = 16 + u(rng) * 10;
      s.start = BoundingBox::from_center(96 + (u(rng) - 0.5) * 30,
                                         72 + (u(rng) - 0.5) * 20, w, h);
      s.vx = (u(rng) - 0.5) * 1.0;
      s.vy = (u(rng) - 0.5) * 0.6;
      if (i < half) {
        s.name = "cm_" + std::to_string(i);
        // Jumps of 32-48 px horizontally or 24-36 px vertically, each
        // signed against the accumulated offset.
        const int events = 2 + static_cast<int>(u(rng) * 2);
        double cx = 0, cy = 0;
        auto sign_for = [&](double acc) {
          if (acc != 0) return acc > 0 ? -1.0 : 1.0;
          return u(rng) < 0.5 ? -1.0 : 1.0;
        };
        for (int e = 0; e < events; ++e) {
          CameraEvent ev;
          ev.frame = (e + 1) * length / (events + 1) + static_cast<int>(u(rng) * 5) - 2;
          if (u(rng) < 0.7) {
            ev.dx = sign_for(cx) * (32 + u(rng) * 16);
            if (u(rng) < 0.3) ev.dy = sign_for(cy) * (8 + u(rng) * 8);
          } else {
            ev.dy = sign_for(cy) * (24 + u(rng) * 12);
          }
          cx += ev.dx;
          cy += ev.dy;
          s.camera_events.push_back(ev);
        }
      } else {
        s.name = "deg_" + std::to_string(i - half);
        const int a = length / 5 + static_cast<int>(u(rng) * length / 5);
        s.low_light.push_back({a, std::min(length, a + length / 3)});
        const int b = std::min(length - 2, a + length / 6 + static_cast<int>(u(rng) * length / 4));
        s.crossover.push_back({b, std::min(length, b + length / 4)});
      }
      try {
        validate(s);
        out.push_back(s);
        break;
      } catch (const ConfigError&) {
        if (attempt > 100) throw;
      }
    }
  }
  return out;
}

}  // namespace rgbt
