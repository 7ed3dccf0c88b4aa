// Generates a deterministic 5-class synthetic ultrasound-like corpus
// (PGM images + manifest) for smoke runs and the acceptance suite.
// Each class carries a distinct geometric signature; patients differ by
// jitter and speckle.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "usfmae/image.hpp"
#include "usfmae/manifest.hpp"
#include "usfmae/rng.hpp"

using namespace usfmae;

namespace {

void put(std::vector<uint8_t>& px, int S, int x, int y, int v) {
    if (x < 0 || y < 0 || x >= S || y >= S) return;
    px[static_cast<size_t>(y) * S + x] = static_cast<uint8_t>(std::clamp(v, 0, 255));
}

void draw_disk(std::vector<uint8_t>& px, int S, double cx, double cy, double r, int v) {
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) put(px, S, x, y, v);
}

void draw_line(std::vector<uint8_t>& px, int S, double x0, double y0, double x1, double y1, int v, int w) {
    const int steps = 4 * S;
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        for (int dy = -w; dy <= w; ++dy)
            for (int dx = -w; dx <= w; ++dx) put(px, S, x + dx, y + dy, v);
    }
}

ImageRecord make_image(const std::string& cls, int S, Rng& rng) {
    ImageRecord img;
    img.width = S;
    img.height = S;
    img.channels = 1;
    img.pixels.assign(static_cast<size_t>(S) * S, 0);
    // speckle background
    for (auto& p : img.pixels) p = static_cast<uint8_t>(20 + rng.uniform_int(40));

    const double c = S / 2.0;
    const double j = S * 0.06;
    const double jx = rng.uniform(-j, j), jy = rng.uniform(-j, j);
    const int w = std::max(1, S / 32);
    if (cls == "Aorta") {
        draw_disk(img.pixels, S, c + jx, c + jy, S * 0.22, 220);
        draw_disk(img.pixels, S, c + jx, c + jy, S * 0.10, 90);
    } else if (cls == "Flows") {
        for (int qy = 0; qy < 2; ++qy)
            for (int qx = 0; qx < 2; ++qx)
                draw_disk(img.pixels, S, S * (0.28 + 0.44 * qx) + jx, S * (0.28 + 0.44 * qy) + jy, S * 0.10, 210);
    } else if (cls == "VSign") {
        draw_line(img.pixels, S, S * 0.2 + jx, S * 0.2 + jy, c + jx, S * 0.8 + jy, 230, w);
        draw_line(img.pixels, S, S * 0.8 + jx, S * 0.2 + jy, c + jx, S * 0.8 + jy, 230, w);
    } else if (cls == "XSign") {
        draw_line(img.pixels, S, S * 0.2 + jx, S * 0.2 + jy, S * 0.8 + jx, S * 0.8 + jy, 230, w);
        draw_line(img.pixels, S, S * 0.8 + jx, S * 0.2 + jy, S * 0.2 + jx, S * 0.8 + jy, 230, w);
    } else {  // Other: horizontal banding, no focal structure
        for (int y = 0; y < S; ++y) {
            const int v = 40 + static_cast<int>(60.0 * (1.0 + std::sin(y * 0.5 + jx)));
            for (int x = 0; x < S; ++x)
                put(img.pixels, S, x, y, v + rng.uniform_int(30));
        }
    }
    return img;
}

}  // namespace

int main(int argc, char** argv) {
    std::string out_dir = "synth_corpus";
    int patients_per_class = 4;
    int images_per_patient = 3;
    int size = 64;
    uint64_t seed = 7;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        auto next = [&]() -> std::string {
            if (i + 1 >= argc) {
                std::cerr << "error: missing value for " << a << "\n";
                std::exit(2);
            }
            return argv[++i];
        };
        if (a == "--out") out_dir = next();
        else if (a == "--patients-per-class") patients_per_class = std::stoi(next());
        else if (a == "--images-per-patient") images_per_patient = std::stoi(next());
        else if (a == "--size") size = std::stoi(next());
        else if (a == "--seed") seed = std::stoull(next());
        else {
            std::cerr << "usage: usfmae-synth [--out DIR] [--patients-per-class N] "
                         "[--images-per-patient M] [--size S] [--seed K]\n";
            return 2;
        }
    }

    try {
        std::filesystem::create_directories(std::filesystem::path(out_dir) / "images");
        Rng rng(seed);
        DatasetManifest manifest;
        manifest.classes = kDefaultClasses;
        int patient_no = 0;
        for (const auto& cls : kDefaultClasses) {
            for (int p = 0; p < patients_per_class; ++p, ++patient_no) {
                const std::string pid = "P" + std::to_string(patient_no);
                for (int k = 0; k < images_per_patient; ++k) {
                    ImageRecord img = make_image(cls, size, rng);
                    const std::string rel = "images/" + cls + "_" + pid + "_" + std::to_string(k) + ".pgm";
                    save_image(img, (std::filesystem::path(out_dir) / rel).string());
                    manifest.records.push_back({rel, cls, pid, "unassigned"});
                }
            }
        }
        write_manifest(manifest, (std::filesystem::path(out_dir) / "manifest.csv").string());
        std::cout << "wrote " << manifest.records.size() << " images to " << out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
