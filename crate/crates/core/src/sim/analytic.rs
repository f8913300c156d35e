//! Closed-form GOP timing: sequential encode and send at a constant mean
//! throughput, waiting for frames that have not been captured yet.

/// One GOP's worth of inputs for the analytic model.
#[derive(Debug, Clone, Copy)]
pub struct GopInputs<'a> {
    /// Time the client finished sending the previous GOP (`t_{k-1}`).
    pub prev_end: f64,
    /// Camera-buffer backlog after the previous GOP (`Q_{k-1}`), seconds.
    pub prev_queue: f64,
    pub gop_length: f64,
    /// Capture time of the first frame.
    pub first_capture: f64,
    pub frame_rate: f64,
    /// Per-frame encode delays in seconds.
    pub encode: &'a [f64],
    /// Per-frame compressed sizes in bits.
    pub sizes: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GopTiming {
    /// `t_k`, when the last frame finishes sending.
    pub end: f64,
    /// `Q_k`.
    pub queue: f64,
    /// `Δt_k`, total idle time waiting for captures.
    pub wait: f64,
    /// Encode start of the first frame.
    pub encode_start: f64,
    /// Send-completion time of each frame.
    pub send_done: Vec<f64>,
}

/// The queue law, clamped at zero.
pub fn next_queue(prev_queue: f64, prev_end: f64, end: f64, gop_length: f64) -> f64 {
    (prev_queue + (end - prev_end) - gop_length).max(0.0)
}

/// Evaluates the GOP under mean throughput `throughput_mbps`.
///
/// Frame `j` starts encoding at `max(pipeline free, capture_j)`; the gaps
/// sum to `Δt_k`, so `t_k = t_{k-1} + Σe_j + Σd_j / b̄ + Δt_k`.
pub fn simulate_gop_analytic(inputs: &GopInputs<'_>, throughput_mbps: f64) -> GopTiming {
    let bps = throughput_mbps * 1e6;
    let mut free = inputs.prev_end;
    let mut wait = 0.0;
    let mut encode_start = f64::NAN;
    let mut send_done = Vec::with_capacity(inputs.sizes.len());
    for (j, (&e, &d)) in inputs.encode.iter().zip(inputs.sizes).enumerate() {
        let capture = inputs.first_capture + j as f64 / inputs.frame_rate;
        if capture > free {
            wait += capture - free;
            free = capture;
        }
        if j == 0 {
            encode_start = free;
        }
        free += e + if d > 0.0 { d / bps } else { 0.0 };
        send_done.push(free);
    }
    if send_done.is_empty() {
        encode_start = inputs.prev_end.max(inputs.first_capture);
    }
    GopTiming {
        end: free,
        queue: next_queue(inputs.prev_queue, inputs.prev_end, free, inputs.gop_length),
        wait,
        encode_start,
        send_done,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let g = simulate_gop_analytic(
            &GopInputs {
                prev_end: 0.0,
                prev_queue: 0.0,
                gop_length: 2.0,
                first_capture: 0.0,
                frame_rate: 2.0,
                encode: &[0.01; 4],
                sizes: &[1e6; 4],
            },
            4.0,
        );
        let expect = [0.26, 0.76, 1.26, 1.76];
        for (a, b) in g.send_done.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.end - 1.76).abs() < 1e-12);
        assert!((g.wait - 0.72).abs() < 1e-12);
        assert_eq!(g.queue, 0.0);
    }

    #[test]
    fn capture_limited_when_fast() {
        let g = simulate_gop_analytic(
            &GopInputs {
                prev_end: 10.0,
                prev_queue: 1.5,
                gop_length: 3.0,
                first_capture: 10.0,
                frame_rate: 15.0,
                encode: &[0.0; 45],
                sizes: &[1.0; 45],
            },
            1e9,
        );
        // Ends right after the last capture at 10 + 44/15.
        assert!((g.end - (10.0 + 44.0 / 15.0)).abs() < 1e-6);
        assert!((g.end - 10.0 - 3.0).abs() <= 1.0 / 15.0 + 1e-6);
        assert!((g.queue - (1.5 + (g.end - 10.0) - 3.0).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn slow_link_grows_queue() {
        let g = simulate_gop_analytic(
            &GopInputs {
                prev_end: 0.0,
                prev_queue: 2.0,
                gop_length: 2.0,
                first_capture: 0.0,
                frame_rate: 1.0,
                encode: &[0.0, 0.0],
                sizes: &[4e6, 4e6],
            },
            1.0,
        );
        assert_eq!(g.end, 8.0);
        assert_eq!(g.wait, 0.0);
        assert_eq!(g.queue, 2.0 + 8.0 - 2.0);
    }

    proptest! {
        #[test]
        fn gop_timing_identity_holds(
            prev_end in 0.0..20.0f64,
            first_capture in 0.0..20.0f64,
            frames in proptest::collection::vec((0.0..0.05f64, 1e4..4e6f64), 1..30),
            b in 0.5..20.0f64,
        ) {
            let (encode, sizes): (Vec<f64>, Vec<f64>) = frames.into_iter().unzip();
            let g = simulate_gop_analytic(&GopInputs {
                prev_end, prev_queue: 0.0, gop_length: 2.0, first_capture,
                frame_rate: 15.0, encode: &encode, sizes: &sizes,
            }, b);
            let rhs = prev_end + encode.iter().sum::<f64>() + sizes.iter().sum::<f64>() / (b * 1e6) + g.wait;
            prop_assert!((g.end - rhs).abs() < 1e-9);
            prop_assert!(g.wait >= 0.0);
            prop_assert!(g.end > prev_end);
        }
    }
}
