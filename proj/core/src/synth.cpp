#include "mbcr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace mbcr {
namespace {

constexpr std::array<double, 8> kLeadGain = {1.0, 0.6, 0.8, 1.1, 1.2, 1.3, 1.1, 0.9};  // canonical order

std::mt19937_64 record_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

bool has_rhythm(Abnormality a) { return a != Abnormality::lead_localized_inversion; }
bool has_inversion(Abnormality a) { return a != Abnormality::irregular_rhythm; }

std::string abnormal_text(Abnormality a) {
    switch (a) {
        case Abnormality::irregular_rhythm: return "atrial fibrillation";
        case Abnormality::lead_localized_inversion: return "anterior t wave inversion";
        case Abnormality::both: return "atrial fibrillation with anterior t wave inversion";
    }
    return "abnormal";
}

EcgRecord make_record(const SynthConfig& cfg, std::size_t index, int label) {
    auto rng = record_rng(cfg.seed, index);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, cfg.noise_std > 0.0 ? cfg.noise_std : 1.0);

    const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate_hz));
    const double dt = 1.0 / cfg.sample_rate_hz;
    const double rr = 60.0 / (60.0 + 30.0 * unit(rng));
    const bool abnormal = label == 1;

    std::vector<double> beats;
    for (double t = rr * unit(rng); t < cfg.duration_s + 0.5;) {
        beats.push_back(t);
        double step;
        if (abnormal && has_rhythm(cfg.abnormality)) {
            const double dev = 0.25 + 0.20 * unit(rng);
            step = rr * (1.0 + (unit(rng) < 0.5 ? -dev : dev));
        } else {
            step = rr * (1.0 + 0.1 * (unit(rng) - 0.5));
        }
        t += step;
    }

    const double gain = 0.8 + 0.4 * unit(rng);
    std::vector<std::vector<double>> leads(kCanonicalLeads.size(), std::vector<double>(n, 0.0));
    for (std::size_t l = 0; l < leads.size(); ++l) {
        const bool inverted = abnormal && has_inversion(cfg.abnormality) && l >= 2 && l <= 4;  // V1-V3
        const double amp = kLeadGain[l] * gain * (inverted ? -1.0 : 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) * dt;
            double v = 0.0;
            for (double b : beats) {
                const double q = (t - b) / 0.03;
                const double w = (t - b - 0.25) / 0.08;
                if (std::abs(q) < 8.0) v += std::exp(-0.5 * q * q);
                if (std::abs(w) < 8.0) v += 0.3 * std::exp(-0.5 * w * w);
            }
            leads[l][i] = amp * v;
        }
        if (cfg.noise_std > 0.0)
            for (double& v : leads[l]) v += noise(rng);
    }

    EcgRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", index);
    rec.id = id;
    rec.sample_rate_hz = cfg.sample_rate_hz;
    rec.label = label;
    rec.label_text = abnormal ? abnormal_text(cfg.abnormality)
                              : (index % 2 ? "normal electrocardiogram" : "normal sinus rhythm");
    if (cfg.n_leads == 8) {
        rec.lead_names.assign(kCanonicalLeads.begin(), kCanonicalLeads.end());
        rec.samples = std::move(leads);
        return rec;
    }
    // Limb leads from Einthoven/Goldberger relations on II and III.
    const auto& ii = leads[0];
    const auto& iii = leads[1];
    std::vector<double> i_lead(n), avr(n), avl(n), avf(n);
    for (std::size_t k = 0; k < n; ++k) {
        i_lead[k] = ii[k] - iii[k];
        avr[k] = -(i_lead[k] + ii[k]) / 2.0;
        avl[k] = i_lead[k] - ii[k] / 2.0;
        avf[k] = ii[k] - i_lead[k] / 2.0;
    }
    rec.lead_names = {"I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};
    rec.samples = {i_lead, ii, iii, avr, avl, avf};
    for (std::size_t l = 2; l < leads.size(); ++l) rec.samples.push_back(leads[l]);
    return rec;
}

}  // namespace

std::string to_string(Abnormality a) {
    switch (a) {
        case Abnormality::irregular_rhythm: return "irregular_rhythm";
        case Abnormality::lead_localized_inversion: return "lead_localized_inversion";
        case Abnormality::both: return "both";
    }
    return "?";
}

Abnormality parse_abnormality(std::string_view text) {
    if (text == "irregular_rhythm" || text == "rhythm") return Abnormality::irregular_rhythm;
    if (text == "lead_localized_inversion" || text == "inversion") return Abnormality::lead_localized_inversion;
    if (text == "both") return Abnormality::both;
    throw Error("unknown abnormality '" + std::string(text) + "'");
}

std::vector<EcgRecord> generate(const SynthConfig& cfg) {
    if (cfg.n_leads != 8 && cfg.n_leads != 12) throw Error("synthetic records need 8 or 12 leads");
    if (cfg.sample_rate_hz <= 0 || !(cfg.duration_s > 0.0)) throw Error("sample rate and duration must be positive");
    if (!(cfg.class_balance >= 0.0 && cfg.class_balance <= 1.0)) throw Error("class balance must be in [0, 1]");
    if (!(cfg.noise_std >= 0.0)) throw Error("noise std must be nonnegative");

    const auto n_abnormal =
        static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n_records) * cfg.class_balance));
    std::vector<int> labels(cfg.n_records, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_abnormal), 1);
    std::mt19937_64 order_rng(cfg.seed);
    std::shuffle(labels.begin(), labels.end(), order_rng);

    std::vector<EcgRecord> out;
    out.reserve(cfg.n_records);
    for (std::size_t i = 0; i < cfg.n_records; ++i) out.push_back(make_record(cfg, i, labels[i]));
    return out;
}

void write_dataset(const std::vector<EcgRecord>& records, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
    std::vector<std::string> entries;
    for (const auto& rec : records) {
        const std::string name = rec.id + ".csv";
        write_record_file(dir / name, rec);
        entries.push_back(name);
    }
    write_manifest(dir / "manifest.txt", entries);
}

}  // namespace mbcr
