// f64 helpers that `core` does not provide.

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Per-device share of `batch` samples over `gpus` devices (ceiling split).
#[inline]
pub(crate) fn per_device(batch: u32, gpus: u32) -> u32 {
    debug_assert!(gpus > 0);
    batch.div_ceil(gpus)
}
