//! Reference external predictor: answers every tile request with its own input.
//!
//! Fault modes exist to exercise the caller's error handling.

use std::io::{self, BufReader, BufWriter};
use std::process::ExitCode;

use clap::Parser;
use volmerge::predict::protocol::{read_request, write_response};

#[derive(Parser)]
#[command(name = "tile-echo", about = "Echo predictor for the volmerge tile protocol")]
struct Args {
    /// Reply with tile_index + 1.
    #[arg(long)]
    bad_index: bool,
    /// Exit with status 1 after answering this many tiles.
    #[arg(long)]
    fail_after: Option<usize>,
    /// Add this constant to every voxel.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    offset: f32,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    let mut served = 0usize;
    loop {
        if args.fail_after.is_some_and(|n| served >= n) {
            eprintln!("tile-echo: injected failure after {served} tiles");
            return ExitCode::FAILURE;
        }
        let frame = match read_request(&mut input) {
            Ok(Some(f)) => f,
            Ok(None) => return ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("tile-echo: {e}");
                return ExitCode::FAILURE;
            }
        };
        let index = if args.bad_index {
            frame.tile_index.wrapping_add(1)
        } else {
            frame.tile_index
        };
        let payload: Vec<f32> = frame.payload.iter().map(|v| v + args.offset).collect();
        if let Err(e) = write_response(&mut output, index, frame.voxel_dims(), &payload) {
            eprintln!("tile-echo: {e}");
            return ExitCode::FAILURE;
        }
        served += 1;
    }
}
