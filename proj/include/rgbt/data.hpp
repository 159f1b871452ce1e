#pragma once

// Sequences on disk (RGBT234 and GTOT layouts) and the synthetic RGB/thermal
// sequence generator.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rgbt/geometry.hpp"
#include "rgbt/image.hpp"

namespace rgbt {

struct FramePair {
  Image rgb;      // 3 channels
  Image thermal;  // 3 channels (replicated when stored as gray)
  std::optional<BoundingBox> gt;

  ImageBounds bounds() const { return {rgb.width, rgb.height}; }
};

/// Challenge tags.
inline const std::vector<std::string>& attribute_vocabulary() {
  static const std::vector<std::string> v = {"NO", "PO", "HO", "LI", "LR", "TC",
                                             "DEF", "FM", "SV", "MB", "CM", "BC"};
  return v;
}

/// Frames are either held in memory or read lazily from the listed files.
class RgbtSequence {
 public:
  std::string name;
  std::vector<BoundingBox> gt;
  std::set<std::string> attributes;

  int size() const { return static_cast<int>(gt.size()); }
  FramePair frame(int i) const;

  void set_frames(std::vector<FramePair> frames);
  void set_files(std::vector<std::string> rgb, std::vector<std::string> thermal);
  bool in_memory() const { return !frames_.empty(); }
  const std::vector<std::string>& rgb_files() const { return rgb_files_; }

 private:
  std::vector<FramePair> frames_;
  std::vector<std::string> rgb_files_;
  std::vector<std::string> t_files_;
};

enum class Layout { rgbt234, gtot };

Layout parse_layout(const std::string& s);

/// Parses one box per line; fields separated by commas, tabs or spaces.
/// corners=true reads x1 y1 x2 y2. Throws LoadError naming the line.
std::vector<BoundingBox> read_boxes(const std::string& path, bool corners);
void write_boxes(const std::string& path, const std::vector<BoundingBox>& boxes);

/// rgbt234: visible/, infrared/, visible.txt, infrared.txt (x,y,w,h).
/// gtot:    v/, i/, groundTruth_v.txt, groundTruth_i.txt (x1 y1 x2 y2).
/// The visible ground truth is used for both modalities unless
/// use_thermal_gt. Tags come from attributes.txt and, RGBT234 style, any
/// <tag>.tag file with a non-zero entry.
RgbtSequence load_sequence(const std::string& dir, Layout layout,
                           bool use_thermal_gt = false);

/// Every sub-directory of `root` holding a sequence, sorted by name.
std::vector<RgbtSequence> load_dataset(const std::string& root, Layout layout);

/// Writes the rgbt234 layout plus attributes.txt.
void save_sequence(const RgbtSequence& seq, const std::string& dir);

// ---------------------------------------------------------------- synthetic

struct CameraEvent {
  int frame = 0;
  double dx = 0;  // camera motion; image content moves by -dx
  double dy = 0;
};

struct Interval {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  bool contains(int f) const { return f >= begin && f < end; }
};

struct SynthSpec {
  std::string name = "synth";
  int length = 60;
  int width = 160;
  int height = 120;
  BoundingBox start{60, 45, 24, 20};
  double vx = 0.5;  // target motion in world coordinates per frame
  double vy = 0.2;
  double scale_rate = 0.0;  // relative size change per frame
  std::vector<CameraEvent> camera_events;
  std::vector<Interval> low_light;
  double low_light_gain = 0.2;
  double low_light_noise = 6.0;
  std::vector<Interval> crossover;
  std::uint64_t seed = 1;
};

/// Throws ConfigError when the target would leave the image or events fall
/// outside [0, length).
void validate(const SynthSpec& spec);

/// Renders the sequence in memory. Tags: CM with camera events, LI with
/// low-light intervals, TC with crossover intervals, SV with scale change,
/// NO always.
RgbtSequence synth_generate(const SynthSpec& spec);

/// The desk-scale benchmark: `count` sequences, the first half with camera
/// motion, the second half with illumination and crossover degradation.
std::vector<SynthSpec> benchmark_specs(int count, std::uint64_t seed,
                                       int length = 60);

}  // namespace rgbt
