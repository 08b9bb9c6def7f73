use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use protochem::cli::{run, Io};

fn main() {
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        eprintln!("interrupted: finishing in-flight requests, rerun the same command to resume");
        flag.store(true, Ordering::SeqCst);
    }) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    let mut io = Io {
        stdin: &mut stdin,
        stdout: &mut stdout,
        stderr: &mut stderr,
    };
    let code = run(std::env::args_os(), &mut io, Some(cancel));
    std::process::exit(code);
}
