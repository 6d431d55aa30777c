#pragma once

#include <string>
#include <string_view>

#include "fva/projections.hpp"
#include "fva/signature.hpp"
#include "fva/speaker_gen.hpp"

namespace fva {

// JSON model documents:
//   {"format": "fva-model", "kind": ..., "version": 1, "dim": D,
//    "params": {...}, "rng": {"seed": ..., "algorithm": ...},
//    "training_meta": {...}}
// Failures raise FormatError with kMalformedDocument, kFormatMismatch,
// kKindMismatch, kVersionMismatch, kSchemaViolation or kNonFiniteParameter.

inline constexpr const char* kModelFormat = "fva-model";
inline constexpr int kModelVersion = 1;

std::string vclip_to_json(const VclipModel& m);
VclipModel vclip_from_json(std::string_view text);

std::string generator_to_json(const SpeakerGenerator& sg);
SpeakerGenerator generator_from_json(std::string_view text);

std::string signature_to_json(const SignatureNet& s);
SignatureNet signature_from_json(std::string_view text);

// The "kind" field of a well-formed document.
std::string model_kind(std::string_view text);

void save_model(const VclipModel& m, const std::string& path);
void save_model(const SpeakerGenerator& sg, const std::string& path);
void save_model(const SignatureNet& s, const std::string& path);

VclipModel load_vclip(const std::string& path);
SpeakerGenerator load_speaker_generator(const std::string& path);
SignatureNet load_signature(const std::string& path);

}  // namespace fva
