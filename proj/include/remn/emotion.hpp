#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace remn {

/// FER2013 label codes.
enum class EmotionClass { Angry = 0, Disgust = 1, Fear = 2, Happy = 3, Sad = 4, Surprise = 5, Neutral = 6 };

inline constexpr std::size_t kNumClasses = 7;

/// Per-class counts indexed by class code.
using Histogram = std::array<std::size_t, kNumClasses>;

inline constexpr std::array<EmotionClass, kNumClasses> kAllClasses{
    EmotionClass::Angry, EmotionClass::Disgust,  EmotionClass::Fear,    EmotionClass::Happy,
    EmotionClass::Sad,   EmotionClass::Surprise, EmotionClass::Neutral};

constexpr int class_code(EmotionClass c) noexcept { return static_cast<int>(c); }

std::string_view class_name(EmotionClass c) noexcept;

/// Lowercase adjective used in prompts ("angry", "surprise", ...).
std::string_view class_keyword(EmotionClass c) noexcept;

std::optional<EmotionClass> class_from_code(long code) noexcept;

/// Case-insensitive match on class_name.
std::optional<EmotionClass> class_from_name(std::string_view name);

std::size_t histogram_total(const Histogram& h) noexcept;

}  // namespace remn
