use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let code = rffmmd::cli::run(std::env::args_os(), &mut out, &mut io::stderr());
    drop(out);
    ExitCode::from(code as u8)
}
